#include "phasealign/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "phasealign/errors.hpp"
#include "phasealign/filters.hpp"
#include "phasealign/io.hpp"
#include "phasealign/warp.hpp"
#include "phasealign/warp_kernels.hpp"

namespace phasealign {

namespace {

// Base HU levels, shared by both phases.
constexpr double kTissueHu = 20.0;
constexpr double kTissueTextureHu = 30.0;
constexpr double kPancreasHu = 110.0;
constexpr double kDuctHu = 5.0;
constexpr double kVesselHu = 200.0;

struct Vec3 {
    double z, y, x;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// White noise drawn on a grid padded by the kernel radius, smoothed and
// cropped, so border voxels have the same statistics as interior ones.
std::vector<float> smooth_noise(Shape3 shape, double sigma, std::mt19937_64& rng) {
    const int64_t pad = static_cast<int64_t>(std::ceil(3.0 * sigma));
    const Shape3 big{shape.d + 2 * pad, shape.h + 2 * pad, shape.w + 2 * pad};
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<float> buf(static_cast<size_t>(big.voxels()));
    for (float& v : buf) v = static_cast<float>(g(rng));
    gaussian_smooth(buf, big, sigma);
    std::vector<float> out(static_cast<size_t>(shape.voxels()));
    for (int64_t z = 0; z < shape.d; ++z)
        for (int64_t y = 0; y < shape.h; ++y)
            for (int64_t x = 0; x < shape.w; ++x)
                out[shape.index(z, y, x)] = buf[big.index(z + pad, y + pad, x + pad)];
    return out;
}

// Pancreas frame: ellipsoid centred at `c`, rotated by `angle` in the (h, w) plane.
struct Ellipsoid {
    Vec3 c{};
    Vec3 r{};
    double angle = 0.0;

    Vec3 local(double z, double y, double x) const {
        const double dz = z - c.z, dy = y - c.y, dx = x - c.x;
        const double ca = std::cos(angle), sa = std::sin(angle);
        return {dz, ca * dy + sa * dx, -sa * dy + ca * dx};
    }
    Vec3 world(const Vec3& l) const {
        const double ca = std::cos(angle), sa = std::sin(angle);
        return {c.z + l.z, c.y + ca * l.y - sa * l.x, c.x + sa * l.y + ca * l.x};
    }
    double radius(const Vec3& l) const {
        return std::sqrt(l.z * l.z / (r.z * r.z) + l.y * l.y / (r.y * r.y) + l.x * l.x / (r.x * r.x));
    }
};

} // namespace

void PhantomConfig::validate() const {
    if (shape.d < kMinPhantomExtent || shape.h < kMinPhantomExtent || shape.w < kMinPhantomExtent)
        throw ConfigError("phantom.shape: every extent must be >= " + std::to_string(kMinPhantomExtent) +
                          " to hold the structures, got " + to_string(shape));
    if (n_cases < 0) throw ConfigError("phantom.n_cases: must be >= 0");
    if (!(tumor_rate >= 0.0 && tumor_rate <= 1.0)) throw ConfigError("phantom.tumor_rate: must lie in [0, 1]");
    if (!(deform_sigma > 0.0)) throw ConfigError("phantom.deform_sigma: must be > 0");
    if (!(deform_max >= 0.0)) throw ConfigError("phantom.deform_max: must be >= 0");
    if (!std::isfinite(venous_tumor_contrast) || !std::isfinite(arterial_tumor_contrast))
        throw ConfigError("phantom: tumor contrasts must be finite");
    if (!(noise_std >= 0.0)) throw ConfigError("phantom.noise_std: must be >= 0");
}

DeformationField smooth_random_field(Shape3 shape, double deform_sigma, double deform_max, std::mt19937_64& rng) {
    if (shape.d < 1 || shape.h < 1 || shape.w < 1) throw DataError("smooth_random_field: bad shape " + to_string(shape));
    if (!(deform_sigma > 0.0)) throw DataError("smooth_random_field: deform_sigma must be > 0");
    DeformationField f(shape);
    for (int c = 0; c < 3; ++c) {
        const std::vector<float> noise = smooth_noise(shape, deform_sigma, rng);
        auto comp = f.component(c);
        std::copy(noise.begin(), noise.end(), comp.begin());
        double mean = 0.0;
        for (float v : comp) mean += v;
        mean /= static_cast<double>(comp.size());
        for (float& v : comp) v = static_cast<float>(v - mean);
    }
    const double m = f.max_norm();
    const double scale = (deform_max > 0.0 && m > 0.0) ? deform_max / m : 0.0;
    for (float& v : f.u) v = static_cast<float>(v * scale);
    return f;
}

DeformationField invert_field(const DeformationField& u, int iterations) {
    const Shape3 s = u.shape;
    const int64_t n = s.voxels();
    DeformationField v(s);
    for (size_t i = 0; i < u.u.size(); ++i) v.u[i] = -u.u[i];
    DeformationField next(s);
    for (int it = 0; it < iterations; ++it) {
        for (int64_t z = 0; z < s.d; ++z)
            for (int64_t y = 0; y < s.h; ++y)
                for (int64_t x = 0; x < s.w; ++x) {
                    const int64_t i = s.index(z, y, x);
                    const float pz = static_cast<float>(z) + v.u[i];
                    const float py = static_cast<float>(y) + v.u[n + i];
                    const float px = static_cast<float>(x) + v.u[2 * n + i];
                    for (int c = 0; c < 3; ++c)
                        next.u[c * n + i] =
                            -kernels::sample(u.component(c).data(), s, pz, py, px, kernels::Boundary::clamp);
                }
        std::swap(v.u, next.u);
    }
    return v;
}

CasePair generate_case(const PhantomConfig& cfg, std::mt19937_64& rng, std::string case_id) {
    cfg.validate();
    const Shape3 s = cfg.shape;
    const int64_t n = s.voxels();
    const double scale = std::min({s.d, s.h, s.w}) / 64.0;

    // Anatomy.
    Ellipsoid panc;
    panc.c = {s.d / 2.0 + uniform(rng, -0.08, 0.08) * s.d, s.h / 2.0 + uniform(rng, -0.08, 0.08) * s.h,
              s.w / 2.0 + uniform(rng, -0.08, 0.08) * s.w};
    panc.r = {s.d * uniform(rng, 0.12, 0.16), s.h * uniform(rng, 0.14, 0.19), s.w * uniform(rng, 0.25, 0.31)};
    panc.angle = uniform(rng, -0.4, 0.4);

    const double duct_r = uniform(rng, 1.1, 1.6) * scale;
    const double duct_oz = uniform(rng, -0.2, 0.2) * panc.r.z;
    const double duct_oy = uniform(rng, -0.2, 0.2) * panc.r.y;
    const double duct_bend = uniform(rng, -0.25, 0.25) * panc.r.y;

    const bool has_tumor = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.tumor_rate;
    Ellipsoid tumor;
    {
        // Centre inside the inner part of the pancreas.
        const double rr = uniform(rng, 0.0, 0.55);
        const double th = uniform(rng, 0.0, std::numbers::pi);
        const double ph = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const Vec3 l{rr * panc.r.z * std::cos(th), rr * panc.r.y * std::sin(th) * std::sin(ph),
                     rr * panc.r.x * std::sin(th) * std::cos(ph)};
        tumor.c = panc.world(l);
        tumor.r = {uniform(rng, 3.0, 6.0) * scale, uniform(rng, 3.0, 6.0) * scale, uniform(rng, 3.0, 6.0) * scale};
        tumor.angle = uniform(rng, 0.0, std::numbers::pi);
    }

    // Two vessels running along depth beside the pancreas.
    struct Vessel {
        double y, x, r;
    };
    std::vector<Vessel> vessels;
    for (int k = 0; k < 2; ++k) {
        const double side = k == 0 ? -1.0 : 1.0;
        vessels.push_back({panc.c.y + side * (panc.r.y + uniform(rng, 3.0, 7.0) * scale),
                           panc.c.x + uniform(rng, -0.5, 0.5) * panc.r.x, uniform(rng, 1.5, 2.8) * scale});
    }

    std::vector<float> texture = smooth_noise(s, 2.5 * scale, rng);
    {
        double ss = 0.0;
        for (float v : texture) ss += double(v) * v;
        const double sd = std::sqrt(ss / n);
        for (float& v : texture) v = static_cast<float>(v / (sd > 0 ? sd : 1.0) * kTissueTextureHu);
    }

    LabelMap label(s);
    std::vector<float> base(static_cast<size_t>(n));
    std::vector<uint8_t> in_tumor(static_cast<size_t>(n), 0);
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const int64_t i = s.index(z, y, x);
                const Vec3 l = panc.local(z, y, x);
                const double pr = panc.radius(l);
                uint8_t cls = kBackground;
                double hu = kTissueHu + texture[i];
                for (const auto& v : vessels) {
                    const double dy = y - v.y, dx = x - v.x;
                    if (dy * dy + dx * dx <= v.r * v.r) hu = kVesselHu + 0.2 * texture[i];
                }
                if (pr <= 1.0) {
                    cls = kPancreas;
                    hu = kPancreasHu + 0.25 * texture[i];
                    const double along = l.x / panc.r.x;
                    if (std::abs(along) <= 0.75 && pr <= 0.85) {
                        const double cy = duct_oy + duct_bend * std::sin(std::numbers::pi * along);
                        const double dz = l.z - duct_oz, dy = l.y - cy;
                        if (dz * dz + dy * dy <= duct_r * duct_r) {
                            cls = kDuct;
                            hu = kDuctHu;
                        }
                    }
                }
                if (has_tumor && pr <= 1.15 && tumor.radius(tumor.local(z, y, x)) <= 1.0) {
                    cls = kTumor;
                    hu = kPancreasHu + 0.25 * texture[i];
                    in_tumor[i] = 1;
                }
                label.data()[i] = cls;
                base[i] = static_cast<float>(hu);
            }
    if (s.voxels() > 0 && label.count(kPancreas) == 0)
        throw DataError("generate_case: pancreas does not fit the grid " + to_string(s));

    auto phase_image = [&](double contrast) {
        std::vector<float> img = base;
        for (int64_t i = 0; i < n; ++i)
            if (in_tumor[i]) img[i] = static_cast<float>(img[i] - contrast);
        return img;
    };
    std::vector<float> ven = phase_image(cfg.venous_tumor_contrast);
    std::vector<float> art_aligned = phase_image(cfg.arterial_tumor_contrast);

    DeformationField truth = smooth_random_field(s, cfg.deform_sigma, cfg.deform_max, rng);
    std::vector<float> art(static_cast<size_t>(n));
    if (cfg.deform_max > 0.0) {
        const DeformationField render = invert_field(truth);
        warp_scalar(render, art_aligned, art, Border::clamp);
    } else {
        art = art_aligned;
    }

    if (cfg.noise_std > 0.0) {
        std::normal_distribution<double> g(0.0, cfg.noise_std);
        for (float& v : ven) v = static_cast<float>(v + g(rng));
        for (float& v : art) v = static_cast<float>(v + g(rng));
    }

    CasePair c;
    c.venous = Volume(s, std::move(ven), {}, Phase::venous);
    c.arterial = Volume(s, std::move(art), {}, Phase::arterial);
    c.label = std::move(label);
    c.case_id = std::move(case_id);
    c.true_field = std::move(truth);
    return c;
}

std::string phantom_case_id(int index) {
    std::ostringstream os;
    os << "case_" << std::setw(4) << std::setfill('0') << index;
    return os.str();
}

CasePair generate_case(const PhantomConfig& cfg, int index) {
    std::seed_seq seq{static_cast<uint32_t>(cfg.seed & 0xffffffffu), static_cast<uint32_t>(cfg.seed >> 32),
                      static_cast<uint32_t>(index), 0x9e3779b9u};
    std::mt19937_64 rng(seq);
    return generate_case(cfg, rng, phantom_case_id(index));
}

void write_case(const CasePair& c, const std::filesystem::path& dir, std::vector<ManifestEntry>& manifest) {
    std::filesystem::create_directories(dir);
    ManifestEntry e;
    e.case_id = c.case_id;
    e.venous = dir / (c.case_id + "_venous.vol3");
    e.arterial = dir / (c.case_id + "_arterial.vol3");
    e.label = dir / (c.case_id + "_label.vol3");
    write_volume(c.venous, e.venous);
    write_volume(c.arterial, e.arterial);
    write_labels(c.label, e.label);
    if (c.true_field) {
        e.field = dir / (c.case_id + "_field.def3");
        write_field(*c.true_field, e.field);
    }
    e.has_tumor = c.label.count(kTumor) > 0;
    manifest.push_back(std::move(e));
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    const auto base = path.parent_path();
    auto rel = [&](const std::filesystem::path& p) {
        return p.empty() ? std::string() : std::filesystem::relative(p, base).generic_string();
    };
    for (const auto& e : entries) {
        nlohmann::json j{{"case_id", e.case_id},   {"venous", rel(e.venous)}, {"arterial", rel(e.arterial)},
                         {"label", rel(e.label)},  {"has_tumor", e.has_tumor}};
        if (!e.field.empty()) j["field"] = rel(e.field);
        out << j.dump() << "\n";
    }
}

std::filesystem::path write_phantom_dataset(const PhantomConfig& cfg, const std::filesystem::path& dir) {
    cfg.validate();
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < cfg.n_cases; ++i) write_case(generate_case(cfg, i), dir, entries);
    const auto path = dir / "manifest.jsonl";
    write_manifest(entries, path);
    return path;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open manifest");
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.case_id = j.at("case_id").get<std::string>();
            e.venous = base / j.at("venous").get<std::string>();
            e.arterial = base / j.at("arterial").get<std::string>();
            e.label = base / j.at("label").get<std::string>();
            if (j.contains("field")) e.field = base / j.at("field").get<std::string>();
            e.has_tumor = j.value("has_tumor", false);
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

CasePair load_case(const ManifestEntry& e) {
    CasePair c;
    c.case_id = e.case_id;
    c.venous = read_volume(e.venous);
    c.venous.set_frame(Phase::venous);
    c.arterial = read_volume(e.arterial);
    c.arterial.set_frame(Phase::arterial);
    c.label = read_labels(e.label);
    if (!(c.label.shape() == c.venous.shape()))
        throw DataError(e.case_id + ": label shape " + to_string(c.label.shape()) + " differs from venous " +
                        to_string(c.venous.shape()));
    if (!e.field.empty()) c.true_field = read_field(e.field);
    return c;
}

} // namespace phasealign
