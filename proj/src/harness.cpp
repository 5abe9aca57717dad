#include "cotrainlab/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "cotrainlab/diagnostics.hpp"
#include "cotrainlab/error.hpp"
#include "cotrainlab/parallel.hpp"
#include "cotrainlab/rng.hpp"

namespace cotrainlab::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// JSON reading with pointer-qualified errors

std::string escape_token(const std::string& key) {
    std::string out;
    for (char c : key) {
        if (c == '~') out += "~0";
        else if (c == '/') out += "~1";
        else out += c;
    }
    return out;
}

std::string type_name(const json& v) { return v.type_name(); }

double as_double(const json& v, const std::string& ptr) {
    if (!v.is_number()) throw ConfigError(ptr, "expected a number, got " + type_name(v));
    return v.get<double>();
}

int as_int(const json& v, const std::string& ptr) {
    if (!v.is_number_integer()) throw ConfigError(ptr, "expected an integer, got " + type_name(v));
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError(ptr, "integer out of range");
    }
    return static_cast<int>(x);
}

std::uint64_t as_u64(const json& v, const std::string& ptr) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) throw ConfigError(ptr, "expected a non-negative integer");
    throw ConfigError(ptr, "expected an integer, got " + type_name(v));
}

bool as_bool(const json& v, const std::string& ptr) {
    if (!v.is_boolean()) throw ConfigError(ptr, "expected a boolean, got " + type_name(v));
    return v.get<bool>();
}

std::string as_string(const json& v, const std::string& ptr) {
    if (!v.is_string()) throw ConfigError(ptr, "expected a string, got " + type_name(v));
    return v.get<std::string>();
}

// An object whose keys must come from `allowed`. Unknown keys are reported
// before anything else is read.
class Object {
public:
    Object(const json& j, std::string ptr, std::initializer_list<const char*> allowed)
        : j_(j), ptr_(std::move(ptr)) {
        if (!j_.is_object()) throw ConfigError(ptr_, "expected an object, got " + type_name(j_));
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!ok.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
        }
    }

    std::string at(const std::string& key) const { return ptr_ + "/" + escape_token(key); }
    const json* find(const std::string& key) const {
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    const json& require(const std::string& key) const {
        const auto* v = find(key);
        if (!v) throw ConfigError(at(key), "required key missing");
        return *v;
    }

    void get(const std::string& key, double& out) const {
        if (const auto* v = find(key)) out = as_double(*v, at(key));
    }
    void get(const std::string& key, int& out) const {
        if (const auto* v = find(key)) out = as_int(*v, at(key));
    }
    void get(const std::string& key, bool& out) const {
        if (const auto* v = find(key)) out = as_bool(*v, at(key));
    }
    void get(const std::string& key, std::string& out) const {
        if (const auto* v = find(key)) out = as_string(*v, at(key));
    }
    void get(const std::string& key, std::optional<double>& out) const {
        if (const auto* v = find(key); v && !v->is_null()) out = as_double(*v, at(key));
    }

private:
    const json& j_;
    std::string ptr_;
};

// Runs `fn`, re-raising library validation errors as ConfigError at `ptr`.
template <class Fn>
void validated(const std::string& ptr, Fn&& fn) {
    try {
        fn();
    } catch (const InvalidConfigError& e) {
        throw ConfigError(ptr, e.what());
    }
}

// ---------------------------------------------------------------------------
// Sections

learners::LearnerKind parse_learner(const json& j, const std::string& ptr) {
    const Object o(j, ptr, {"arch", "hidden_units", "patch_side", "stride", "inner"});
    learners::LearnerKind k;
    std::string arch = "logistic", inner = "logistic";
    o.get("arch", arch);
    o.get("inner", inner);
    try {
        k.arch = learners::arch_from_string(arch);
    } catch (const Error& e) {
        throw ConfigError(o.at("arch"), e.what());
    }
    try {
        k.inner = learners::arch_from_string(inner);
    } catch (const Error& e) {
        throw ConfigError(o.at("inner"), e.what());
    }
    o.get("hidden_units", k.hidden_units);
    o.get("patch_side", k.patch_side);
    o.get("stride", k.stride);
    if (k.arch != learners::Arch::Patch) {
        k.patch_side = 0;
        k.stride = 1;
        k.inner = learners::Arch::Logistic;
    }
    if (k.inner == learners::Arch::Patch) throw ConfigError(o.at("inner"), "inner scorer cannot be a patch model");
    if (k.scorer() == learners::Arch::Mlp && k.hidden_units < 1) {
        throw ConfigError(o.at("hidden_units"), "an mlp scorer needs hidden_units >= 1");
    }
    if (k.scorer() == learners::Arch::Logistic) k.hidden_units = 0;
    if (k.arch == learners::Arch::Patch && (k.patch_side < 1 || k.stride < 1)) {
        throw ConfigError(ptr, "patch learners need patch_side >= 1 and stride >= 1");
    }
    return k;
}

json learner_json(const learners::LearnerKind& k) {
    json j{{"arch", learners::to_string(k.arch)}};
    if (k.arch == learners::Arch::Patch) {
        j["patch_side"] = k.patch_side;
        j["stride"] = k.stride;
        j["inner"] = learners::to_string(k.inner);
    }
    if (k.scorer() == learners::Arch::Mlp) j["hidden_units"] = k.hidden_units;
    return j;
}

learners::TrainConfig parse_train(const json& j, const std::string& ptr) {
    const Object o(j, ptr,
                   {"lr", "momentum", "weight_decay", "epochs", "lr_drop_every", "lr_drop_factor", "batch_size",
                    "augment"});
    learners::TrainConfig t;
    o.get("lr", t.lr);
    o.get("momentum", t.momentum);
    o.get("weight_decay", t.weight_decay);
    o.get("epochs", t.epochs);
    o.get("lr_drop_every", t.lr_drop_every);
    o.get("lr_drop_factor", t.lr_drop_factor);
    o.get("batch_size", t.batch_size);
    if (const auto* a = o.find("augment")) {
        const Object ao(*a, o.at("augment"), {"crop_pad", "hflip", "max_rot_deg"});
        ao.get("crop_pad", t.augment.crop_pad);
        ao.get("hflip", t.augment.hflip);
        ao.get("max_rot_deg", t.augment.max_rot_deg);
        if (t.augment.crop_pad < 0) throw ConfigError(ao.at("crop_pad"), "must be >= 0");
        if (t.augment.max_rot_deg < 0) throw ConfigError(ao.at("max_rot_deg"), "must be >= 0");
    }
    validated(ptr, [&] { t.validate(); });
    return t;
}

json train_json(const learners::TrainConfig& t) {
    return {{"lr", t.lr},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"epochs", t.epochs},
            {"lr_drop_every", t.lr_drop_every},
            {"lr_drop_factor", t.lr_drop_factor},
            {"batch_size", t.batch_size},
            {"augment",
             {{"crop_pad", t.augment.crop_pad}, {"hflip", t.augment.hflip}, {"max_rot_deg", t.augment.max_rot_deg}}}};
}

// Desk-scale defaults: shape priors and the standard model see the image
// through wide overlapping windows; the texture prior through small ones.
learners::LearnerKind default_learner(priors::Prior prior) {
    if (prior == priors::Prior::Patch) return learners::LearnerKind::patch(12, 4, learners::Arch::Mlp, 32);
    return learners::LearnerKind::patch(16, 4, learners::Arch::Mlp, 32);
}

MemberConfig parse_member(const json& j, const std::string& ptr) {
    const Object o(j, ptr, {"prior", "learner", "train"});
    MemberConfig m;
    const auto ptr_prior = o.at("prior");
    try {
        m.prior = priors::prior_from_string(as_string(o.require("prior"), ptr_prior));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(ptr_prior, e.what());
    }
    m.learner = default_learner(m.prior);
    if (const auto* l = o.find("learner")) m.learner = parse_learner(*l, o.at("learner"));
    if (const auto* t = o.find("train")) m.train = parse_train(*t, o.at("train"));
    return m;
}

json member_json(const MemberConfig& m) {
    return {{"prior", priors::to_string(m.prior)}, {"learner", learner_json(m.learner)}, {"train", train_json(m.train)}};
}

void parse_style(const json& j, const std::string& ptr, data::SynthStyle& s) {
    const Object o(j, ptr,
                   {"img_side", "outline_contrast", "outline_width", "texture_amplitude", "attr_color_strength",
                    "noise_sigma", "max_clutter", "gap_probability", "min_radius", "max_radius"});
    o.get("img_side", s.img_side);
    o.get("outline_contrast", s.outline_contrast);
    o.get("outline_width", s.outline_width);
    o.get("texture_amplitude", s.texture_amplitude);
    o.get("attr_color_strength", s.attr_color_strength);
    o.get("noise_sigma", s.noise_sigma);
    o.get("max_clutter", s.max_clutter);
    o.get("gap_probability", s.gap_probability);
    o.get("min_radius", s.min_radius);
    o.get("max_radius", s.max_radius);
    if (s.img_side < 8) throw ConfigError(o.at("img_side"), "must be >= 8");
    if (s.max_clutter < 0) throw ConfigError(o.at("max_clutter"), "must be >= 0");
    if (s.gap_probability < 0 || s.gap_probability > 1) throw ConfigError(o.at("gap_probability"), "must be in [0, 1]");
    if (!(s.min_radius > 0) || s.min_radius > s.max_radius || s.max_radius > 0.5) {
        throw ConfigError(ptr, "radii must satisfy 0 < min_radius <= max_radius <= 0.5");
    }
}

json style_json(const data::SynthStyle& s) {
    return {{"img_side", s.img_side},
            {"outline_contrast", s.outline_contrast},
            {"outline_width", s.outline_width},
            {"texture_amplitude", s.texture_amplitude},
            {"attr_color_strength", s.attr_color_strength},
            {"noise_sigma", s.noise_sigma},
            {"max_clutter", s.max_clutter},
            {"gap_probability", s.gap_probability},
            {"min_radius", s.min_radius},
            {"max_radius", s.max_radius}};
}

void check_rho(const std::optional<double>& v, const std::string& ptr) {
    if (v && (*v < 0 || *v > 1)) throw ConfigError(ptr, "must be in [0, 1]");
}

DatasetConfig parse_dataset(const json& j, const std::string& ptr) {
    if (!j.is_object()) throw ConfigError(ptr, "expected an object, got " + type_name(j));
    DatasetConfig d;
    const auto kind_it = j.find("kind");
    if (kind_it == j.end()) throw ConfigError(ptr + "/kind", "required key missing");
    const auto kind = as_string(*kind_it, ptr + "/kind");
    if (kind == "synthst") {
        const Object o(j, ptr,
                       {"kind", "n_classes", "n_per_class", "texture_rho", "tint_rho", "test_per_class",
                        "test_texture_rho", "labeled_texture_rho", "labeled_tint_rho", "style"});
        d.kind = DatasetKind::SynthST;
        o.get("n_classes", d.synth.n_classes);
        o.get("n_per_class", d.synth.n_per_class);
        o.get("texture_rho", d.synth.texture_rho);
        o.get("tint_rho", d.synth.tint_rho);
        o.get("test_per_class", d.test_per_class);
        o.get("test_texture_rho", d.test_texture_rho);
        o.get("labeled_texture_rho", d.labeled_texture_rho);
        o.get("labeled_tint_rho", d.labeled_tint_rho);
        if (const auto* s = o.find("style")) parse_style(*s, o.at("style"), d.synth.style);
        if (d.synth.n_classes < 2 || d.synth.n_classes > data::synthst_motif_count()) {
            throw ConfigError(o.at("n_classes"),
                              "must be in [2, " + std::to_string(data::synthst_motif_count()) + "]");
        }
        if (d.synth.n_per_class < 1) throw ConfigError(o.at("n_per_class"), "must be >= 1");
        if (d.test_per_class < 1) throw ConfigError(o.at("test_per_class"), "must be >= 1");
        check_rho(d.synth.texture_rho, o.at("texture_rho"));
        check_rho(d.synth.tint_rho, o.at("tint_rho"));
        check_rho(d.test_texture_rho, o.at("test_texture_rho"));
        check_rho(d.labeled_texture_rho, o.at("labeled_texture_rho"));
        check_rho(d.labeled_tint_rho, o.at("labeled_tint_rho"));
    } else if (kind == "skewed") {
        const Object o(j, ptr, {"kind", "variant", "scale", "style"});
        d.kind = DatasetKind::Skewed;
        o.get("variant", d.skew_variant);
        o.get("scale", d.scale);
        if (const auto* s = o.find("style")) parse_style(*s, o.at("style"), d.synth.style);
        if (d.skew_variant != "default" && d.skew_variant != "fullskew") {
            throw ConfigError(o.at("variant"), "expected \"default\" or \"fullskew\"");
        }
        if (!(d.scale > 0)) throw ConfigError(o.at("scale"), "must be > 0");
        d.synth.n_classes = 2;
    } else if (kind == "raw") {
        const Object o(j, ptr, {"kind", "train", "test"});
        d.kind = DatasetKind::Raw;
        d.train_dir = as_string(o.require("train"), o.at("train"));
        d.test_dir = as_string(o.require("test"), o.at("test"));
    } else {
        throw ConfigError(ptr + "/kind", "expected \"synthst\", \"skewed\" or \"raw\", got \"" + kind + "\"");
    }
    return d;
}

json dataset_json(const DatasetConfig& d) {
    switch (d.kind) {
        case DatasetKind::SynthST: {
            json j{{"kind", "synthst"},
                   {"n_classes", d.synth.n_classes},
                   {"n_per_class", d.synth.n_per_class},
                   {"texture_rho", d.synth.texture_rho},
                   {"tint_rho", d.synth.tint_rho},
                   {"test_per_class", d.test_per_class},
                   {"style", style_json(d.synth.style)}};
            if (d.test_texture_rho) j["test_texture_rho"] = *d.test_texture_rho;
            if (d.labeled_texture_rho) j["labeled_texture_rho"] = *d.labeled_texture_rho;
            if (d.labeled_tint_rho) j["labeled_tint_rho"] = *d.labeled_tint_rho;
            return j;
        }
        case DatasetKind::Skewed:
            return {{"kind", "skewed"},
                    {"variant", d.skew_variant},
                    {"scale", d.scale},
                    {"style", style_json(d.synth.style)}};
        case DatasetKind::Raw:
            return {{"kind", "raw"}, {"train", d.train_dir.string()}, {"test", d.test_dir.string()}};
    }
    return {};
}

imagefx::EdgeParams parse_edges(const json& j, const std::string& ptr) {
    const Object o(j, ptr,
                   {"bilateral_diameter", "bilateral_sigma_color", "bilateral_sigma_space", "canny_low", "canny_high",
                    "gaussian_kernel", "gaussian_sigma", "sobel_kernel", "upsample_side"});
    imagefx::EdgeParams e;
    o.get("bilateral_diameter", e.bilateral_diameter);
    o.get("bilateral_sigma_color", e.bilateral_sigma_color);
    o.get("bilateral_sigma_space", e.bilateral_sigma_space);
    o.get("canny_low", e.canny_low);
    o.get("canny_high", e.canny_high);
    o.get("gaussian_kernel", e.gaussian_kernel);
    o.get("gaussian_sigma", e.gaussian_sigma);
    o.get("sobel_kernel", e.sobel_kernel);
    o.get("upsample_side", e.upsample_side);
    validated(ptr, [&] { e.validate(); });
    return e;
}

json edges_json(const imagefx::EdgeParams& e) {
    return {{"bilateral_diameter", e.bilateral_diameter},
            {"bilateral_sigma_color", e.bilateral_sigma_color},
            {"bilateral_sigma_space", e.bilateral_sigma_space},
            {"canny_low", e.canny_low},
            {"canny_high", e.canny_high},
            {"gaussian_kernel", e.gaussian_kernel},
            {"gaussian_sigma", e.gaussian_sigma},
            {"sobel_kernel", e.sobel_kernel},
            {"upsample_side", e.upsample_side}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Pretrain: return "pretrain";
        case Mode::SelfTrain: return "selftrain";
        case Mode::CoTrain: return "cotrain";
        case Mode::Ensemble: return "ensemble";
        case Mode::Distill: return "distill";
    }
    return "?";
}

Mode mode_from_string(const std::string& name) {
    for (auto m : {Mode::Pretrain, Mode::SelfTrain, Mode::CoTrain, Mode::Ensemble, Mode::Distill}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("/mode", "unknown mode \"" + name + "\"");
}

void ExperimentConfig::validate() const {
    if (members.empty()) throw ConfigError("/priors", "at least one prior is required");
    validated("/schedule", [&] { schedule.validate(); });
    validated("/edges", [&] { edges.validate(); });
    if (split.labeled_per_class < 1) throw ConfigError("/split/labeled_per_class", "must be >= 1");
    if (split.val_fraction < 0 || split.val_fraction >= 1) throw ConfigError("/split/val_fraction", "must be in [0, 1)");
    if (bootstrap_resamples < 1) throw ConfigError("/bootstrap/resamples", "must be >= 1");
    if (!(bootstrap_level > 0 && bootstrap_level < 1)) throw ConfigError("/bootstrap/level", "must be in (0, 1)");
    if ((mode == Mode::CoTrain || mode == Mode::Ensemble) && members.size() < 2) {
        throw ConfigError("/priors", to_string(mode) + " needs at least two priors");
    }
    if (mode == Mode::Ensemble && ensemble_methods.empty()) {
        throw ConfigError("/ensemble/methods", "at least one method is required");
    }
    const bool stacked = std::find(ensemble_methods.begin(), ensemble_methods.end(), ensembles::Method::Stacked) !=
                         ensemble_methods.end();
    if (mode == Mode::Ensemble && stacked && split.val_fraction <= 0) {
        throw ConfigError("/split/val_fraction", "the stacked ensemble needs a validation split");
    }
    if (mode == Mode::Distill && (!distill || distill_pool.empty())) {
        throw ConfigError("/distill/pool", "mode distill needs a pool file");
    }
    for (std::size_t i = 0; i < members.size(); ++i) {
        validated("/priors/" + std::to_string(i) + "/train", [&] { members[i].train.validate(); });
    }
}

ExperimentConfig parse_config(const json& doc) {
    const Object o(doc, "",
                   {"seed", "mode", "dataset", "split", "edges", "priors", "schedule", "disjoint", "ensemble", "distill",
                    "bootstrap", "output"});
    ExperimentConfig cfg;
    if (const auto* v = o.find("seed")) cfg.seed = as_u64(*v, "/seed");
    cfg.mode = mode_from_string(as_string(o.require("mode"), "/mode"));
    cfg.dataset = parse_dataset(o.require("dataset"), "/dataset");

    if (const auto* s = o.find("split")) {
        const Object so(*s, "/split", {"labeled_per_class", "val_fraction"});
        so.get("labeled_per_class", cfg.split.labeled_per_class);
        so.get("val_fraction", cfg.split.val_fraction);
    }
    if (const auto* e = o.find("edges")) cfg.edges = parse_edges(*e, "/edges");

    if (const auto* p = o.find("priors")) {
        if (!p->is_array()) throw ConfigError("/priors", "expected an array");
        for (std::size_t i = 0; i < p->size(); ++i) {
            cfg.members.push_back(parse_member((*p)[i], "/priors/" + std::to_string(i)));
        }
    } else {
        for (auto prior : {priors::Prior::Canny, priors::Prior::Patch}) {
            cfg.members.push_back({prior, default_learner(prior), {}});
        }
    }

    if (const auto* s = o.find("schedule")) {
        const Object so(*s, "/schedule", {"eras", "fraction_per_era", "epochs_per_era"});
        so.get("eras", cfg.schedule.eras);
        so.get("fraction_per_era", cfg.schedule.fraction_per_era);
        so.get("epochs_per_era", cfg.schedule.epochs_per_era);
    }
    o.get("disjoint", cfg.disjoint);

    if (const auto* e = o.find("ensemble")) {
        const Object eo(*e, "/ensemble", {"methods", "stacked_train"});
        if (const auto* m = eo.find("methods")) {
            if (!m->is_array()) throw ConfigError("/ensemble/methods", "expected an array");
            cfg.ensemble_methods.clear();
            for (std::size_t i = 0; i < m->size(); ++i) {
                const auto ptr = "/ensemble/methods/" + std::to_string(i);
                try {
                    cfg.ensemble_methods.push_back(ensembles::method_from_string(as_string((*m)[i], ptr)));
                } catch (const ConfigError&) {
                    throw;
                } catch (const Error& err) {
                    throw ConfigError(ptr, err.what());
                }
            }
        }
        if (const auto* t = eo.find("stacked_train")) cfg.stacked_train = parse_train(*t, "/ensemble/stacked_train");
    }

    if (const auto* d = o.find("distill")) {
        const Object dobj(*d, "/distill", {"learner", "train", "pool"});
        MemberConfig m{priors::Prior::Standard, default_learner(priors::Prior::Standard), {}};
        if (const auto* l = dobj.find("learner")) m.learner = parse_learner(*l, "/distill/learner");
        if (const auto* t = dobj.find("train")) m.train = parse_train(*t, "/distill/train");
        std::string pool;
        dobj.get("pool", pool);
        cfg.distill = m;
        cfg.distill_pool = pool;
    }

    if (const auto* b = o.find("bootstrap")) {
        const Object bo(*b, "/bootstrap", {"resamples", "level"});
        bo.get("resamples", cfg.bootstrap_resamples);
        bo.get("level", cfg.bootstrap_level);
    }
    std::string output = cfg.output.string();
    o.get("output", output);
    cfg.output = output;

    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", path.string() + ": malformed JSON: " + e.what());
    }
    return parse_config(doc);
}

json to_json(const ExperimentConfig& cfg) {
    json priors_json = json::array();
    for (const auto& m : cfg.members) priors_json.push_back(member_json(m));
    json methods = json::array();
    for (auto m : cfg.ensemble_methods) methods.push_back(ensembles::to_string(m));
    json j{{"seed", cfg.seed},
           {"mode", to_string(cfg.mode)},
           {"dataset", dataset_json(cfg.dataset)},
           {"split", {{"labeled_per_class", cfg.split.labeled_per_class}, {"val_fraction", cfg.split.val_fraction}}},
           {"edges", edges_json(cfg.edges)},
           {"priors", priors_json},
           {"schedule",
            {{"eras", cfg.schedule.eras},
             {"fraction_per_era", cfg.schedule.fraction_per_era},
             {"epochs_per_era", cfg.schedule.epochs_per_era}}},
           {"disjoint", cfg.disjoint},
           {"ensemble", {{"methods", methods}, {"stacked_train", train_json(cfg.stacked_train)}}},
           {"bootstrap", {{"resamples", cfg.bootstrap_resamples}, {"level", cfg.bootstrap_level}}},
           {"output", cfg.output.string()}};
    if (cfg.distill) {
        j["distill"] = {{"learner", learner_json(cfg.distill->learner)},
                        {"train", train_json(cfg.distill->train)},
                        {"pool", cfg.distill_pool.string()}};
    }
    return j;
}

void apply_env_overrides(ExperimentConfig& cfg) {
    const char* v = std::getenv("COTRAINLAB_SEED");
    if (!v) return;
    const std::string s(v);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("/seed", "COTRAINLAB_SEED is not an unsigned integer: \"" + s + "\"");
    }
    errno = 0;
    const auto seed = std::strtoull(s.c_str(), nullptr, 10);
    if (errno == ERANGE) throw ConfigError("/seed", "COTRAINLAB_SEED out of range");
    cfg.seed = seed;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

data::SkewSpec scaled(data::SkewSpec spec, double scale) {
    auto scale_counts = [&](std::map<data::Cell, int>& counts) {
        for (auto& [cell, n] : counts) n = static_cast<int>(std::lround(n * scale));
    };
    scale_counts(spec.labeled_counts);
    scale_counts(spec.unlabeled_counts);
    spec.test_size = static_cast<int>(std::lround(spec.test_size * scale));
    return spec;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    const data::SplitSpec split{cfg.split.labeled_per_class, cfg.split.val_fraction, derive_seed(cfg.seed, "split")};
    PreparedData out;
    switch (d.kind) {
        case DatasetKind::SynthST: {
            const auto train = data::gen_synthst(d.synth, derive_seed(cfg.seed, "data-train"));
            auto test_spec = d.synth;
            test_spec.n_per_class = d.test_per_class;
            test_spec.texture_rho = d.test_texture_rho.value_or(d.synth.texture_rho);
            out.test = data::gen_synthst(test_spec, derive_seed(cfg.seed, "data-test"), train.size());
            out.splits = data::make_splits(train, split);
            if (d.labeled_texture_rho || d.labeled_tint_rho) {
                auto labeled_spec = d.synth;
                labeled_spec.texture_rho = d.labeled_texture_rho.value_or(d.synth.texture_rho);
                labeled_spec.tint_rho = d.labeled_tint_rho.value_or(d.synth.tint_rho);
                out.splits.labeled =
                    data::rerender_synthst(out.splits.labeled, labeled_spec, derive_seed(cfg.seed, "data-labeled"));
            }
            break;
        }
        case DatasetKind::Skewed: {
            const auto spec = scaled(d.skew_variant == "fullskew" ? data::celeba_fullskew() : data::celeba_default(),
                                     d.scale);
            const auto style = d.synth.style;
            const data::CellSource source = [style](int cls, int attr, Rng& rng) {
                return data::render_synthst(cls, attr, false, 2, style, rng);
            };
            auto sk = data::build_skewed(source, 2, spec, derive_seed(cfg.seed, "data-skewed"));
            // Validation comes out of the unlabeled pool, uniformly.
            const auto n_val = static_cast<std::size_t>(std::lround(cfg.split.val_fraction * sk.unlabeled.size()));
            std::vector<std::size_t> order(sk.unlabeled.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng rng(split.seed);
            rng.shuffle(std::span<std::size_t>(order));
            std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
            std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
            std::sort(val.begin(), val.end());
            std::sort(rest.begin(), rest.end());
            out.splits.labeled = std::move(sk.labeled);
            out.splits.validation = sk.unlabeled.subset(val);
            out.splits.unlabeled = sk.unlabeled.subset(rest);
            out.test = std::move(sk.test);
            break;
        }
        case DatasetKind::Raw: {
            const auto train = data::load_raw(d.train_dir);
            out.test = data::load_raw(d.test_dir, train.n_classes);
            out.splits = data::make_splits(train, split);
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::string fmt(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::optional<double> parse_opt(const std::string& s, const std::string& file, std::size_t line) {
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw FormatError(file, line, "not a number: \"" + s + "\"");
    return v;
}

long long parse_int(const std::string& s, const std::string& file, std::size_t line) {
    if (s.empty()) throw FormatError(file, line, "empty integer field");
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE) throw FormatError(file, line, "not an integer: \"" + s + "\"");
    return v;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string format_row(const MetricRow& r) {
    return std::to_string(r.era) + "," + r.model_id + "," + r.prior + "," + r.split + "," + fmt(r.accuracy) + "," +
           fmt(r.ci_lo) + "," + fmt(r.ci_hi) + "," + r.phi_pair + "," + fmt(r.phi_value);
}

std::string format_metrics(const std::vector<MetricRow>& rows) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : rows) out += format_row(r) + "\n";
    return out;
}

std::vector<MetricRow> parse_metrics(const std::string& csv) {
    const std::string file = "metrics.csv";
    const auto lines = lines_of(csv);
    if (lines.empty() || lines[0] != kMetricsHeader) throw FormatError(file, 1, "unexpected header");
    std::vector<MetricRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split_csv(lines[i]);
        if (f.size() != 9) {
            throw FormatError(file, i + 1, "expected 9 fields, found " + std::to_string(f.size()));
        }
        MetricRow r;
        r.era = static_cast<int>(parse_int(f[0], file, i + 1));
        r.model_id = f[1];
        r.prior = f[2];
        r.split = f[3];
        r.accuracy = parse_opt(f[4], file, i + 1);
        r.ci_lo = parse_opt(f[5], file, i + 1);
        r.ci_hi = parse_opt(f[6], file, i + 1);
        r.phi_pair = f[7];
        r.phi_value = parse_opt(f[8], file, i + 1);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Pools

void save_pool(const data::PseudoLabelPool& pool, const fs::path& path) {
    std::string out = "example_id,label,source,confidence\n";
    char buf[96];
    for (const auto& e : pool.entries) {
        std::snprintf(buf, sizeof buf, "%llu,%d,%d,%.17g\n", static_cast<unsigned long long>(e.example_id), e.label,
                      e.source, e.confidence);
        out += buf;
    }
    write_file(path, out);
}

data::PseudoLabelPool load_pool(const fs::path& path) {
    const auto file = path.string();
    const auto lines = lines_of(read_file(path));
    if (lines.empty() || lines[0] != "example_id,label,source,confidence") {
        throw FormatError(file, 1, "expected header example_id,label,source,confidence");
    }
    data::PseudoLabelPool pool;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split_csv(lines[i]);
        if (f.size() != 4) throw FormatError(file, i + 1, "expected 4 fields, found " + std::to_string(f.size()));
        const auto id = parse_int(f[0], file, i + 1);
        const auto label = parse_int(f[1], file, i + 1);
        const auto source = parse_int(f[2], file, i + 1);
        const auto conf = parse_opt(f[3], file, i + 1);
        if (id < 0 || label < 0 || source < 0 || !conf) throw FormatError(file, i + 1, "invalid pool entry");
        pool.entries.push_back({static_cast<std::uint64_t>(id), static_cast<int>(label), static_cast<int>(source), *conf});
    }
    return pool;
}

// ---------------------------------------------------------------------------
// Running

namespace {

std::uint64_t member_seed(const ExperimentConfig& cfg, std::size_t i) { return derive_seed(cfg.seed, "member", i); }

struct Workspace {
    PreparedData data;
    engine::Task task;
    std::map<priors::Prior, engine::ViewData> views;
};

Workspace prepare(const ExperimentConfig& cfg, int threads) {
    Workspace ws;
    ws.data = prepare_data(cfg);
    const auto& s = ws.data.splits;
    ws.task = priors::build_task(s.labeled, s.unlabeled, s.validation, ws.data.test);
    std::set<priors::Prior> needed;
    for (const auto& m : cfg.members) needed.insert(m.prior);
    if (cfg.distill) needed.insert(priors::Prior::Standard);
    for (auto p : needed) {
        ws.views.emplace(p, priors::build_view(p, cfg.edges, s.labeled, s.unlabeled, s.validation, ws.data.test, threads));
    }
    return ws;
}

std::vector<learners::ModelParams> pretrain(const ExperimentConfig& cfg, const Workspace& ws, int threads) {
    std::vector<learners::ModelParams> out(cfg.members.size());
    parallel_for(out.size(), threads, [&](std::size_t i) {
        const auto& m = cfg.members[i];
        const auto& view = ws.views.at(m.prior);
        const auto seed = member_seed(cfg, i);
        const auto init = learners::init_learner(m.learner, view.shape, ws.task.n_classes, seed);
        out[i] = learners::fit(init, engine::training_rows(view, ws.task, {}), m.train, false, seed);
    });
    return out;
}

std::vector<engine::Member> as_members(const ExperimentConfig& cfg, const Workspace& ws,
                                       const std::vector<learners::ModelParams>& models) {
    std::vector<engine::Member> out;
    for (std::size_t i = 0; i < models.size(); ++i) {
        out.push_back({models[i], &ws.views.at(cfg.members[i].prior), cfg.members[i].train});
    }
    return out;
}

// Emits metric rows with bootstrap intervals.
class Sink {
public:
    Sink(const ExperimentConfig& cfg, int threads)
        : resamples_(cfg.bootstrap_resamples), level_(cfg.bootstrap_level),
          seed_(derive_seed(cfg.seed, "bootstrap")), threads_(threads) {}

    void model(int era, const std::string& id, const std::string& prior, const std::string& split,
               std::span<const std::uint8_t> correct) {
        MetricRow r{era, id, prior, split, diagnostics::accuracy(correct), {}, {}, "", {}};
        const auto ci = diagnostics::bootstrap_ci(correct, resamples_, level_, seed_, threads_);
        r.ci_lo = ci.lo;
        r.ci_hi = ci.hi;
        rows.push_back(std::move(r));
    }

    void pair(int era, const std::string& a, const std::string& b, const std::string& prior,
              std::span<const std::uint8_t> ca, std::span<const std::uint8_t> cb) {
        MetricRow r{era, a + "-" + b, prior, "test", {}, {}, {}, a + "-" + b, {}};
        try {
            r.phi_value = diagnostics::phi_correlation(ca, cb).phi;
        } catch (const DegenerateInputError&) {
            // constant correctness: phi undefined, left empty
        }
        rows.push_back(std::move(r));
    }

    std::vector<MetricRow> rows;

private:
    int resamples_;
    double level_;
    std::uint64_t seed_;
    int threads_;
};

std::string model_id(std::size_t i) { return "m" + std::to_string(i); }

std::string prior_name(const ExperimentConfig& cfg, std::size_t i) { return priors::to_string(cfg.members[i].prior); }

std::string joined_priors(const ExperimentConfig& cfg, std::size_t a, std::size_t b) {
    return prior_name(cfg, a) + "+" + prior_name(cfg, b);
}

std::vector<std::uint8_t> correct_on(const learners::ModelParams& params, const Matrix& x, std::span<const int> labels) {
    return diagnostics::correct_vector(learners::predict_proba(params, x), labels);
}

// Model rows (test, then validation when present) for one set of models.
void model_rows(Sink& sink, int era, const std::vector<std::string>& ids, const std::vector<std::string>& prior_names,
                const std::vector<const learners::ModelParams*>& models, const std::vector<const engine::ViewData*>& views,
                const engine::Task& task, std::vector<std::vector<std::uint8_t>>* test_correct = nullptr) {
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto c = correct_on(*models[i], views[i]->test, task.test_labels);
        sink.model(era, ids[i], prior_names[i], "test", c);
        if (!task.validation_labels.empty()) {
            sink.model(era, ids[i], prior_names[i], "validation",
                       correct_on(*models[i], views[i]->validation, task.validation_labels));
        }
        if (test_correct) test_correct->push_back(c);
    }
}

void pair_rows(Sink& sink, int era, const ExperimentConfig& cfg, const std::vector<std::vector<std::uint8_t>>& correct) {
    for (std::size_t a = 0; a < correct.size(); ++a) {
        for (std::size_t b = a + 1; b < correct.size(); ++b) {
            sink.pair(era, model_id(a), model_id(b), joined_priors(cfg, a, b), correct[a], correct[b]);
        }
    }
}

void era_rows(Sink& sink, const ExperimentConfig& cfg, const engine::EraMetrics& em,
              std::span<const learners::ModelParams> models, const Workspace& ws) {
    // Test rows come from the record; validation rows are re-evaluated only
    // for the models at hand (the final era).
    for (std::size_t i = 0; i < em.test_correct.size(); ++i) {
        sink.model(em.era, model_id(i), prior_name(cfg, i), "test", em.test_correct[i]);
        if (!models.empty() && !ws.task.validation_labels.empty()) {
            sink.model(em.era, model_id(i), prior_name(cfg, i), "validation",
                       correct_on(models[i], ws.views.at(cfg.members[i].prior).validation, ws.task.validation_labels));
        }
    }
    pair_rows(sink, em.era, cfg, em.test_correct);
}

void distill_rows(Sink& sink, int era, const std::string& id, const learners::ModelParams& model, const Workspace& ws) {
    const auto& view = ws.views.at(priors::Prior::Standard);
    sink.model(era, id, "standard", "test", correct_on(model, view.test, ws.task.test_labels));
    if (!ws.task.validation_labels.empty()) {
        sink.model(era, id, "standard", "validation", correct_on(model, view.validation, ws.task.validation_labels));
    }
}

learners::ModelParams distill_model(const ExperimentConfig& cfg, const Workspace& ws, const data::PseudoLabelPool& pool,
                                    std::uint64_t seed) {
    return engine::distill_standard(pool, ws.task, ws.views.at(priors::Prior::Standard), cfg.distill->learner,
                                    cfg.distill->train, seed);
}

json manifest(const ExperimentConfig& cfg, const Workspace& ws) {
    json member_seeds = json::array();
    for (std::size_t i = 0; i < cfg.members.size(); ++i) member_seeds.push_back(member_seed(cfg, i));
    return {{"config", to_json(cfg)},
            {"seeds",
             {{"master", cfg.seed},
              {"data_train", derive_seed(cfg.seed, "data-train")},
              {"data_test", derive_seed(cfg.seed, "data-test")},
              {"data_labeled", derive_seed(cfg.seed, "data-labeled")},
              {"data_skewed", derive_seed(cfg.seed, "data-skewed")},
              {"split", derive_seed(cfg.seed, "split")},
              {"members", member_seeds},
              {"selftrain", derive_seed(cfg.seed, "selftrain")},
              {"cotrain", derive_seed(cfg.seed, "cotrain")},
              {"distill", derive_seed(cfg.seed, "distill")},
              {"stacked", derive_seed(cfg.seed, "stacked")},
              {"bootstrap", derive_seed(cfg.seed, "bootstrap")}}},
            {"versions",
             {{"cotrainlab", kVersion}, {"checkpoint_format", kCheckpointVersion}, {"metrics_header", kMetricsHeader}}},
            {"sizes",
             {{"labeled", ws.data.splits.labeled.size()},
              {"validation", ws.data.splits.validation.size()},
              {"unlabeled", ws.data.splits.unlabeled.size()},
              {"test", ws.data.test.size()}}}};
}

void save_models(const std::vector<learners::ModelParams>& models, const fs::path& dir) {
    for (std::size_t i = 0; i < models.size(); ++i) save_checkpoint(models[i], dir / ("model_" + model_id(i) + ".ctlb"));
}

}  // namespace

RunOutputs run(const ExperimentConfig& cfg, const fs::path& out_dir, int threads) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const auto ws = prepare(cfg, threads);
    write_file(out_dir / "manifest.json", manifest(cfg, ws).dump(2) + "\n");

    Sink sink(cfg, threads);
    RunOutputs out;
    const auto n = cfg.members.size();

    switch (cfg.mode) {
        case Mode::Pretrain:
        case Mode::Ensemble: {
            out.models = pretrain(cfg, ws, threads);
            std::vector<std::string> ids, names;
            std::vector<const learners::ModelParams*> models;
            std::vector<const engine::ViewData*> views;
            for (std::size_t i = 0; i < n; ++i) {
                ids.push_back(model_id(i));
                names.push_back(prior_name(cfg, i));
                models.push_back(&out.models[i]);
                views.push_back(&ws.views.at(cfg.members[i].prior));
            }
            std::vector<std::vector<std::uint8_t>> correct;
            model_rows(sink, 0, ids, names, models, views, ws.task, &correct);
            pair_rows(sink, 0, cfg, correct);
            if (cfg.mode == Mode::Ensemble) {
                std::string all;
                for (std::size_t i = 0; i < n; ++i) all += (i ? "+" : "") + prior_name(cfg, i);
                std::vector<Matrix> probs, test_logits, val_logits;
                for (std::size_t i = 0; i < n; ++i) {
                    test_logits.push_back(learners::predict_logits(out.models[i], views[i]->test));
                    probs.push_back(learners::predict_proba(out.models[i], views[i]->test));
                    val_logits.push_back(learners::predict_logits(out.models[i], views[i]->validation));
                }
                std::optional<std::pair<double, std::vector<std::uint8_t>>> best;
                for (auto method : cfg.ensemble_methods) {
                    std::vector<int> pred;
                    if (method == ensembles::Method::Stacked) {
                        const auto head = ensembles::stacked_fit(val_logits, ws.task.validation_labels, ws.task.n_classes,
                                                                 cfg.stacked_train, derive_seed(cfg.seed, "stacked"));
                        pred = ensembles::stacked_predict(head, test_logits);
                    } else {
                        pred = ensembles::combine(method, probs);
                    }
                    const auto c = diagnostics::correct_vector(pred, ws.task.test_labels);
                    sink.model(0, "ens-" + ensembles::to_string(method), all, "test", c);
                    if (method != ensembles::Method::Stacked) {
                        const double acc = diagnostics::accuracy(c);
                        if (!best || acc > best->first) best = std::make_pair(acc, c);
                    }
                }
                if (best) sink.model(0, "ens-best", all, "test", best->second);
            }
            save_models(out.models, out_dir);
            break;
        }
        case Mode::SelfTrain: {
            const auto pre = pretrain(cfg, ws, threads);
            const auto members = as_members(cfg, ws, pre);
            std::vector<engine::SelfTrainResult> results(n);
            parallel_for(n, threads, [&](std::size_t i) {
                engine::RunOptions opts;
                opts.on_era = [&, i](int era, const data::PseudoLabelPool& pool, std::span<const engine::Member>) {
                    save_pool(pool, out_dir / ("pool_era_" + std::to_string(era) + "_" + model_id(i) + ".csv"));
                };
                results[i] = engine::self_train(members[i], ws.task, cfg.schedule, derive_seed(cfg.seed, "selftrain", i),
                                                opts);
            });
            for (auto& r : results) out.models.push_back(r.model);
            for (int era = 0; era <= cfg.schedule.eras; ++era) {
                std::vector<std::vector<std::uint8_t>> correct;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto& c = results[i].record.eras[static_cast<std::size_t>(era)].test_correct[0];
                    sink.model(era, model_id(i), prior_name(cfg, i), "test", c);
                    if (era == cfg.schedule.eras && !ws.task.validation_labels.empty()) {
                        sink.model(era, model_id(i), prior_name(cfg, i), "validation",
                                   correct_on(out.models[i], members[i].view->validation, ws.task.validation_labels));
                    }
                    correct.push_back(c);
                }
                pair_rows(sink, era, cfg, correct);
            }
            if (cfg.distill) {
                std::vector<learners::ModelParams> distilled(n);
                parallel_for(n, threads, [&](std::size_t i) {
                    distilled[i] = distill_model(cfg, ws, results[i].pool, derive_seed(cfg.seed, "distill", i));
                });
                for (std::size_t i = 0; i < n; ++i) {
                    distill_rows(sink, cfg.schedule.eras, "distill-" + model_id(i), distilled[i], ws);
                    save_checkpoint(distilled[i], out_dir / ("distill_" + model_id(i) + ".ctlb"));
                }
                // RunOutputs carries the best distillation by test accuracy.
                std::size_t best = 0;
                double best_acc = -1;
                for (const auto& r : sink.rows) {
                    if (r.split == "test" && r.model_id.rfind("distill-", 0) == 0 && *r.accuracy > best_acc) {
                        best_acc = *r.accuracy;
                        best = static_cast<std::size_t>(std::stoul(r.model_id.substr(9)));
                    }
                }
                out.distilled = distilled[best];
            }
            save_models(out.models, out_dir);
            break;
        }
        case Mode::CoTrain: {
            const auto pre = pretrain(cfg, ws, threads);
            const auto members = as_members(cfg, ws, pre);
            engine::RunOptions opts;
            opts.threads = threads;
            opts.on_era = [&](int era, const data::PseudoLabelPool& pool, std::span<const engine::Member>) {
                save_pool(pool, out_dir / ("pool_era_" + std::to_string(era) + ".csv"));
            };
            const auto result = engine::co_train(members, ws.task, cfg.schedule, cfg.disjoint,
                                                 derive_seed(cfg.seed, "cotrain"), opts);
            out.models = result.models;
            for (const auto& em : result.record.eras) {
                const bool last = em.era == cfg.schedule.eras;
                era_rows(sink, cfg, em, last ? std::span<const learners::ModelParams>(out.models)
                                             : std::span<const learners::ModelParams>(), ws);
            }
            if (cfg.distill) {
                out.distilled = distill_model(cfg, ws, result.pool, derive_seed(cfg.seed, "distill", 0));
                distill_rows(sink, cfg.schedule.eras, "distill", *out.distilled, ws);
                save_checkpoint(*out.distilled, out_dir / "distill.ctlb");
            }
            save_models(out.models, out_dir);
            break;
        }
        case Mode::Distill: {
            const auto pool = load_pool(cfg.distill_pool);
            out.distilled = distill_model(cfg, ws, pool, derive_seed(cfg.seed, "distill", 0));
            distill_rows(sink, 0, "distill", *out.distilled, ws);
            save_checkpoint(*out.distilled, out_dir / "distill.ctlb");
            break;
        }
    }

    out.rows = std::move(sink.rows);
    write_file(out_dir / "metrics.csv", format_metrics(out.rows));
    return out;
}

// ---------------------------------------------------------------------------
// Grid search

Grid parse_grid(const json& doc) {
    const Object o(doc, "", {"lr", "K", "gamma"});
    Grid g;
    auto list = [&](const char* key, auto& out, auto convert) {
        const auto& v = o.require(key);
        const auto ptr = o.at(key);
        if (!v.is_array()) throw ConfigError(ptr, "expected an array");
        if (v.empty()) throw ConfigError(ptr, "grid axis is empty");
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert(v[i], ptr + "/" + std::to_string(i)));
    };
    list("lr", g.lr, as_double);
    list("K", g.lr_drop_every, as_int);
    list("gamma", g.lr_drop_factor, as_double);
    for (std::size_t i = 0; i < g.lr.size(); ++i) {
        if (!(g.lr[i] > 0)) throw ConfigError("/lr/" + std::to_string(i), "must be > 0");
    }
    for (std::size_t i = 0; i < g.lr_drop_every.size(); ++i) {
        if (g.lr_drop_every[i] < 0) throw ConfigError("/K/" + std::to_string(i), "must be >= 0");
    }
    for (std::size_t i = 0; i < g.lr_drop_factor.size(); ++i) {
        if (!(g.lr_drop_factor[i] > 0)) throw ConfigError("/gamma/" + std::to_string(i), "must be > 0");
    }
    return g;
}

Grid load_grid(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read grid file " + path.string());
    try {
        return parse_grid(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("", path.string() + ": malformed JSON: " + e.what());
    }
}

bool better_cell(const GridCell& a, const GridCell& b) {
    if (a.validation_accuracy != b.validation_accuracy) return a.validation_accuracy > b.validation_accuracy;
    if (a.lr != b.lr) return a.lr < b.lr;
    if (a.lr_drop_every != b.lr_drop_every) return a.lr_drop_every < b.lr_drop_every;
    return a.lr_drop_factor > b.lr_drop_factor;
}

GridResult grid_search(const ExperimentConfig& cfg, const Grid& grid, int threads) {
    cfg.validate();
    if (grid.cells() == 0) throw ConfigError("", "grid is empty");
    const auto ws = prepare(cfg, threads);
    if (ws.task.validation_labels.empty()) {
        throw ConfigError("/split/val_fraction", "grid search needs a nonempty validation split");
    }
    std::vector<GridCell> cells;
    for (double lr : grid.lr)
        for (int k : grid.lr_drop_every)
            for (double gamma : grid.lr_drop_factor) cells.push_back({lr, k, gamma, 0});

    const auto n = cfg.members.size();
    GridResult result;
    result.table.assign(n, cells);
    parallel_for(n * cells.size(), threads, [&](std::size_t job) {
        const auto m = job / cells.size();
        auto& cell = result.table[m][job % cells.size()];
        const auto& member = cfg.members[m];
        const auto& view = ws.views.at(member.prior);
        auto train = member.train;
        train.lr = cell.lr;
        train.lr_drop_every = cell.lr_drop_every;
        train.lr_drop_factor = cell.lr_drop_factor;
        const auto seed = member_seed(cfg, m);
        const auto init = learners::init_learner(member.learner, view.shape, ws.task.n_classes, seed);
        const auto model = learners::fit(init, engine::training_rows(view, ws.task, {}), train, false, seed);
        cell.validation_accuracy =
            diagnostics::accuracy(correct_on(model, view.validation, ws.task.validation_labels));
    });
    for (const auto& row : result.table) {
        auto best = row.front();
        for (const auto& c : row)
            if (better_cell(c, best)) best = c;
        result.best.push_back(best);
    }
    return result;
}

void write_grid_result(const GridResult& result, const ExperimentConfig& cfg, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::string csv = "member,prior,lr,K,gamma,validation_accuracy\n";
    char buf[160];
    json best = json::array();
    for (std::size_t m = 0; m < result.table.size(); ++m) {
        const auto prior = prior_name(cfg, m);
        for (const auto& c : result.table[m]) {
            std::snprintf(buf, sizeof buf, "%s,%s,%g,%d,%g,%.6f\n", model_id(m).c_str(), prior.c_str(), c.lr,
                          c.lr_drop_every, c.lr_drop_factor, c.validation_accuracy);
            csv += buf;
        }
        const auto& b = result.best[m];
        best.push_back({{"member", model_id(m)},
                        {"prior", prior},
                        {"lr", b.lr},
                        {"K", b.lr_drop_every},
                        {"gamma", b.lr_drop_factor},
                        {"validation_accuracy", b.validation_accuracy}});
    }
    write_file(out_dir / "grid.csv", csv);
    write_file(out_dir / "best.json", best.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::size_t kShapeCount = 10;
constexpr std::size_t kHeaderBytes = 8 + 4 * kShapeCount;

void put_u16(std::string& out, std::uint16_t v) {
    out += static_cast<char>(v & 0xff);
    out += static_cast<char>(v >> 8);
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
    return v;
}

std::uint32_t checked_u32(long long v, const char* what) {
    if (v < 0 || v > 0xffffffffLL) throw InvalidInputError(std::string("checkpoint: ") + what + " out of range");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

void save_checkpoint(const learners::ModelParams& p, const fs::path& path) {
    const auto expected = learners::parameter_count(p.kind, p.input, p.n_classes);
    if (p.weights.size() != expected) {
        throw InvalidInputError("checkpoint: weight count " + std::to_string(p.weights.size()) +
                                " does not match the geometry (" + std::to_string(expected) + ")");
    }
    std::string out = "CTLB";
    put_u16(out, kCheckpointVersion);
    out += static_cast<char>(p.kind.arch);
    out += static_cast<char>(kShapeCount);
    put_u32(out, checked_u32(p.input.height, "height"));
    put_u32(out, checked_u32(p.input.width, "width"));
    put_u32(out, checked_u32(p.input.channels, "channels"));
    put_u32(out, checked_u32(p.n_classes, "classes"));
    put_u32(out, checked_u32(p.kind.hidden_units, "hidden units"));
    put_u32(out, checked_u32(p.kind.patch_side, "patch side"));
    put_u32(out, checked_u32(p.kind.stride, "stride"));
    put_u32(out, static_cast<std::uint32_t>(p.kind.inner));
    put_u32(out, static_cast<std::uint32_t>(p.seed & 0xffffffffULL));
    put_u32(out, static_cast<std::uint32_t>(p.seed >> 32));
    for (float w : p.weights) put_u32(out, std::bit_cast<std::uint32_t>(w));
    write_file(path, out);
}

learners::ModelParams load_checkpoint(const fs::path& path) {
    const auto file = path.string();
    const auto bytes = read_file(path);
    if (bytes.size() < 8) {
        throw FormatError(file, bytes.size(),
                          "truncated header: expected at least 8 bytes, found " + std::to_string(bytes.size()));
    }
    if (bytes.compare(0, 4, "CTLB") != 0) throw FormatError(file, 0, "bad magic (expected \"CTLB\")");
    const auto version = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[4]) |
                                                     (static_cast<unsigned char>(bytes[5]) << 8));
    if (version != kCheckpointVersion) {
        throw FormatError(file, 4, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                       std::to_string(kCheckpointVersion) + ")");
    }
    const auto kind = static_cast<unsigned char>(bytes[6]);
    if (kind > static_cast<unsigned char>(learners::Arch::Patch)) {
        throw FormatError(file, 6, "unknown learner kind " + std::to_string(kind));
    }
    const auto n_shapes = static_cast<unsigned char>(bytes[7]);
    if (n_shapes != kShapeCount) {
        throw FormatError(file, 7, "expected " + std::to_string(kShapeCount) + " shape fields, found " +
                                       std::to_string(n_shapes));
    }
    if (bytes.size() < kHeaderBytes) {
        throw FormatError(file, bytes.size(),
                          "truncated header: expected " + std::to_string(kHeaderBytes) + " bytes, found " +
                              std::to_string(bytes.size()));
    }
    std::uint32_t shape[kShapeCount];
    for (std::size_t i = 0; i < kShapeCount; ++i) {
        shape[i] = get_u32(bytes, 8 + 4 * i);
        if (i < 7 && shape[i] > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
            throw FormatError(file, 8 + 4 * i, "shape field out of range");
        }
    }
    if (shape[7] > static_cast<std::uint32_t>(learners::Arch::Mlp)) {
        throw FormatError(file, 8 + 4 * 7, "unknown inner scorer " + std::to_string(shape[7]));
    }
    learners::ModelParams p;
    p.kind.arch = static_cast<learners::Arch>(kind);
    p.input = {static_cast<int>(shape[0]), static_cast<int>(shape[1]), static_cast<int>(shape[2])};
    p.n_classes = static_cast<int>(shape[3]);
    p.kind.hidden_units = static_cast<int>(shape[4]);
    p.kind.patch_side = static_cast<int>(shape[5]);
    p.kind.stride = static_cast<int>(shape[6]);
    p.kind.inner = static_cast<learners::Arch>(shape[7]);
    p.seed = static_cast<std::uint64_t>(shape[8]) | (static_cast<std::uint64_t>(shape[9]) << 32);
    std::size_t count = 0;
    try {
        count = learners::parameter_count(p.kind, p.input, p.n_classes);
    } catch (const Error& e) {
        throw FormatError(file, 8, std::string("invalid geometry: ") + e.what());
    }
    const auto payload = bytes.size() - kHeaderBytes;
    if (payload != 4 * count) {
        throw FormatError(file, kHeaderBytes,
                          "weight payload: expected " + std::to_string(4 * count) + " bytes, found " +
                              std::to_string(payload));
    }
    p.weights.resize(count);
    for (std::size_t i = 0; i < count; ++i) p.weights[i] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * i));
    return p;
}

// ---------------------------------------------------------------------------
// CLI support

int exit_code_for(const std::exception& e) noexcept {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidConfigError*>(&e)) return 2;
    if (dynamic_cast<const FormatError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

std::string report(const fs::path& run_dir, const std::string& format) {
    if (format != "csv" && format != "json") throw ConfigError("", "unknown report format \"" + format + "\"");
    const auto rows = parse_metrics(read_file(run_dir / "metrics.csv"));
    std::map<std::string, int> last_era;
    for (const auto& r : rows) {
        auto [it, fresh] = last_era.emplace(r.model_id, r.era);
        if (!fresh) it->second = std::max(it->second, r.era);
    }
    std::vector<MetricRow> final_rows;
    for (const auto& r : rows)
        if (r.era == last_era[r.model_id]) final_rows.push_back(r);
    if (format == "csv") return format_metrics(final_rows);

    auto num = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json arr = json::array();
    for (const auto& r : final_rows) {
        arr.push_back({{"era", r.era},
                       {"model_id", r.model_id},
                       {"prior", r.prior},
                       {"split", r.split},
                       {"accuracy", num(r.accuracy)},
                       {"ci_lo", num(r.ci_lo)},
                       {"ci_hi", num(r.ci_hi)},
                       {"phi_pair", r.phi_pair.empty() ? json(nullptr) : json(r.phi_pair)},
                       {"phi_value", num(r.phi_value)}});
    }
    return arr.dump(2) + "\n";
}

}  // namespace cotrainlab::harness
