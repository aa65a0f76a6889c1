#include "phasealign/config.hpp"

#include <fstream>

#include "phasealign/errors.hpp"

namespace phasealign {

const json JsonSection::empty_ = json::object();

JsonSection::JsonSection(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
}

Shape3 JsonSection::get_shape(const std::string& key, Shape3 fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = (*j_)[key];
    if (v.is_number_integer()) {
        const int64_t e = v.get<int64_t>();
        return {e, e, e};
    }
    if (!v.is_array() || v.size() != 3) throw ConfigError(key_path(key) + ": expected an integer or [d, h, w]");
    int64_t e[3];
    for (int i = 0; i < 3; ++i) {
        if (!v[i].is_number_integer() || v[i].get<int64_t>() < 1)
            throw ConfigError(key_path(key) + "[" + std::to_string(i) + "]: expected a positive integer");
        e[i] = v[i].get<int64_t>();
    }
    return {e[0], e[1], e[2]};
}

JsonSection JsonSection::section(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return JsonSection(empty_, key_path(key));
    return JsonSection((*j_)[key], key_path(key));
}

const json& JsonSection::raw(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) throw ConfigError(key_path(key) + ": required key is missing");
    return (*j_)[key];
}

void JsonSection::finish() const {
    for (const auto& [k, v] : j_->items())
        if (!seen_.contains(k)) throw ConfigError(key_path(k) + ": unknown key");
}

ArchitectureSpec read_arch(JsonSection s) {
    ArchitectureSpec a;
    a.n_levels = s.get("n_levels", a.n_levels);
    a.channels = s.get("channels", a.channels);
    a.alignment_shrink = s.get("alignment_shrink", a.alignment_shrink);
    a.background_prior = s.get("background_prior", a.background_prior);
    a.norm = s.get("norm", a.norm);
    a.bias = s.get("bias", a.bias);
    s.finish();
    try {
        a.validate();
    } catch (const ConfigError& e) {
        // "arch: ..." -> "model.arch: ..."
        const std::string msg = e.what();
        throw ConfigError(s.path().empty() || msg.rfind("arch", 0) != 0 ? msg : s.path() + msg.substr(4));
    }
    return a;
}

ModelSpec read_model_spec(JsonSection s, Strategy strategy) {
    ModelSpec m;
    m.strategy = strategy;
    if (s.has("strategy")) m.strategy = parse_strategy(s.require<std::string>("strategy"));
    m.arch = read_arch(s.section("arch"));
    if (s.has("skip_policy")) m.skip_policy = parse_skip_policy(s.require<std::string>("skip_policy"));
    if (s.has("fusion")) m.fusion = parse_fusion(s.require<std::string>("fusion"));
    s.finish();
    m.validate();
    return m;
}

TrainConfig read_train_config(JsonSection s) {
    TrainConfig c;
    c.lr0 = s.get("lr0", c.lr0);
    c.total_iters = s.get("total_iters", c.total_iters);
    c.batch_size = s.get("batch_size", c.batch_size);
    c.patch = s.get_shape("patch", c.patch);
    c.seed = s.get("seed", c.seed);
    c.loss_smooth_eps = s.get("loss_smooth_eps", c.loss_smooth_eps);
    c.momentum = s.get("momentum", c.momentum);
    c.weight_decay = s.get("weight_decay", c.weight_decay);
    c.checkpoint_every = s.get("checkpoint_every", c.checkpoint_every);
    c.jitter = s.get("jitter", c.jitter);
    c.threads = s.get("threads", c.threads);
    s.finish();
    c.validate();
    return c;
}

RegistrationConfig read_registration_config(JsonSection s) {
    RegistrationConfig c;
    c.levels = s.get("levels", c.levels);
    c.iters_per_level = s.get("iters_per_level", c.iters_per_level);
    c.field_smooth_sigma = s.get("field_smooth_sigma", c.field_smooth_sigma);
    c.update_clip = s.get("update_clip", c.update_clip);
    c.intensity_eps = s.get("intensity_eps", c.intensity_eps);
    s.finish();
    c.validate();
    return c;
}

PhantomConfig read_phantom_config(JsonSection s) {
    PhantomConfig c;
    c.shape = s.get_shape("shape", c.shape);
    c.n_cases = s.get("n_cases", c.n_cases);
    c.tumor_rate = s.get("tumor_rate", c.tumor_rate);
    c.deform_sigma = s.get("deform_sigma", c.deform_sigma);
    c.deform_max = s.get("deform_max", c.deform_max);
    c.venous_tumor_contrast = s.get("venous_tumor_contrast", c.venous_tumor_contrast);
    c.arterial_tumor_contrast = s.get("arterial_tumor_contrast", c.arterial_tumor_contrast);
    c.noise_std = s.get("noise_std", c.noise_std);
    c.seed = s.get("seed", c.seed);
    s.finish();
    c.validate();
    return c;
}

json to_json(Shape3 s) { return json::array({s.d, s.h, s.w}); }

json to_json(const ArchitectureSpec& a) {
    return {{"n_levels", a.n_levels}, {"channels", a.channels}, {"alignment_shrink", a.alignment_shrink},
            {"background_prior", a.background_prior}, {"norm", a.norm}, {"bias", a.bias}};
}

json to_json(const ModelSpec& m) {
    return {{"strategy", to_string(m.strategy)},
            {"arch", to_json(m.arch)},
            {"skip_policy", to_string(m.skips())},
            {"fusion", to_string(m.fusion_mode())}};
}

json to_json(const TrainConfig& c) {
    return {{"lr0", c.lr0},
            {"total_iters", c.total_iters},
            {"batch_size", c.batch_size},
            {"patch", to_json(c.patch)},
            {"seed", c.seed},
            {"loss_smooth_eps", c.loss_smooth_eps},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"checkpoint_every", c.checkpoint_every},
            {"jitter", c.jitter},
            {"threads", c.threads}};
}

json to_json(const RegistrationConfig& c) {
    return {{"levels", c.levels},
            {"iters_per_level", c.iters_per_level},
            {"field_smooth_sigma", c.field_smooth_sigma},
            {"update_clip", c.update_clip},
            {"intensity_eps", c.intensity_eps}};
}

json to_json(const PhantomConfig& c) {
    return {{"shape", to_json(c.shape)},
            {"n_cases", c.n_cases},
            {"tumor_rate", c.tumor_rate},
            {"deform_sigma", c.deform_sigma},
            {"deform_max", c.deform_max},
            {"venous_tumor_contrast", c.venous_tumor_contrast},
            {"arterial_tumor_contrast", c.arterial_tumor_contrast},
            {"noise_std", c.noise_std},
            {"seed", c.seed}};
}

void apply_override(json& j, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &j;
    size_t start = 0;
    while (true) {
        const size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
        if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is not inside an object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
    return j;
}

} // namespace phasealign
