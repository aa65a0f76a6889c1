#undef CHECK // torch's logging macro, in via the precompiled header
#include <doctest.h>

#include <string>

#include "phasealign/config.hpp"
#include "phasealign/errors.hpp"
#include "phasealign/experiment.hpp"

using namespace phasealign;

namespace {

std::string config_error(const json& j) {
    try {
        parse_experiment_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

json minimal() { return json{{"data", {{"phantom", {{"shape", 32}, {"n_cases", 4}}}}}}; }

} // namespace

TEST_CASE("overrides set nested keys and parse JSON values") {
    json j = {{"train", {{"lr0", 0.005}}}};
    apply_override(j, "train.lr0=0.01");
    apply_override(j, "train.patch=[32,32,16]");
    apply_override(j, "run_id=smoke");
    apply_override(j, "model.arch.norm=false");
    CHECK(j["train"]["lr0"] == 0.01);
    CHECK(j["train"]["patch"] == json::array({32, 32, 16}));
    CHECK(j["run_id"] == "smoke");
    CHECK(j["model"]["arch"]["norm"] == false);
    CHECK_THROWS_AS(apply_override(j, "no_equals"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "run_id.x=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "train..lr0=3"), ConfigError);
}

TEST_CASE("config structs round trip through JSON") {
    TrainConfig t;
    t.lr0 = 0.02;
    t.patch = {32, 16, 48};
    t.seed = 9;
    const TrainConfig t2 = read_train_config(JsonSection(to_json(t), "train"));
    CHECK(to_json(t2) == to_json(t));

    ModelSpec m;
    m.strategy = Strategy::sa;
    m.arch.channels = {8, 16, 32, 32, 64};
    m.arch.alignment_shrink = 4;
    CHECK(to_json(read_model_spec(JsonSection(to_json(m), "model"), Strategy::na)) == to_json(m));

    PhantomConfig p;
    p.shape = {40, 32, 48};
    p.deform_max = 2.5;
    CHECK(to_json(read_phantom_config(JsonSection(to_json(p), "phantom"))) == to_json(p));

    RegistrationConfig r;
    r.levels = 2;
    CHECK(to_json(read_registration_config(JsonSection(to_json(r), "registration"))) == to_json(r));
}

TEST_CASE("section readers name the offending key") {
    auto message = [](auto&& f) -> std::string {
        try {
            f();
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    };
    const json patch = {{"patch", {32, 0, 32}}};
    CHECK(message([&] { read_train_config(JsonSection(patch, "train")); }).find("train.patch[1]") == 0);
    const json typo = {{"lr", 0.1}};
    CHECK(message([&] { read_train_config(JsonSection(typo, "train")); }).find("train.lr: unknown key") == 0);
    const json type = {{"total_iters", "many"}};
    CHECK(message([&] { read_train_config(JsonSection(type, "train")); }).find("train.total_iters: wrong type") == 0);
    const json arch = {{"channels", {8, 16}}};
    CHECK(message([&] { read_arch(JsonSection(arch, "model.arch")); }).find("model.arch:") == 0);
}

TEST_CASE("experiment config defaults") {
    const ExperimentConfig c = parse_experiment_config(minimal());
    CHECK(c.run_id == "run");
    CHECK(c.strategies.size() == 4);
    CHECK(c.folds_k == 4);
    CHECK(c.folds_run.empty());
    CHECK(c.seeds == std::vector<uint64_t>{0});
    CHECK(c.data.phantom.has_value());
    CHECK(c.predict.overlap == 0.5);
    CHECK_FALSE(c.predict.gaussian);
    CHECK(c.predict.patch == c.train.patch);
    CHECK(c.ensemble_fallback == Strategy::sa);
    CHECK(c.field_source == FieldSource::demons);
    CHECK(c.min_voxels == 50);
    CHECK(c.snapshot == minimal());
}

TEST_CASE("experiment schema errors carry key paths") {
    json j = minimal();
    j["strategies"] = {"na", "xa"};
    CHECK(config_error(j).find("strategies[1]: unknown strategy 'xa'") == 0);
    j["strategies"] = {"na", "na"};
    CHECK(config_error(j).find("strategies[1]: duplicate") == 0);

    j = minimal();
    j["folds"] = {{"k", 4}, {"run", {0, 7}}};
    CHECK(config_error(j).find("folds.run[1]") == 0);

    j = minimal();
    j["train"] = {{"lr0", 0.01}, {"warmup", 10}};
    CHECK(config_error(j).find("train.warmup: unknown key") == 0);

    j = minimal();
    j["registration"] = {{"source", "oracle"}};
    CHECK(config_error(j).find("registration.source") == 0);

    j = minimal();
    j["ensemble"] = {{"fallback", "na"}};
    CHECK(config_error(j).find("ensemble.fallback") == 0);

    j = minimal();
    j["model"] = {{"arch", {{"channels", {8, 16, 32}}}}};
    CHECK(config_error(j).find("model.arch:") == 0);

    j = minimal();
    j["predict"] = {{"overlap", 1.5}};
    CHECK(config_error(j).find("predict") == 0);

    j = minimal();
    j["extra"] = 1;
    CHECK(config_error(j).find("extra: unknown key") == 0);

    j = json{{"data", json::object()}};
    CHECK(config_error(j).find("data:") == 0);
    j = json{{"data", {{"phantom", {{"n_cases", 2}}}, {"manifest", "m.jsonl"}}}};
    CHECK(config_error(j).find("data:") == 0);
    j = json{{"data", {{"phantom", {{"tumour_rate", 0.5}}}}}};
    CHECK(config_error(j).find("data.phantom.tumour_rate: unknown key") == 0);
}
