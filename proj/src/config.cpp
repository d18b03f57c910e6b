#include "pointcra/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pointcra {

using nlohmann::json;

namespace {

json defaults_json() {
    Config d;
    return json::parse(config_to_json(d));
}

void assign_leaf(json& target, const std::string& key, const json& value, const std::string& path) {
    if (!target.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = target[key];
    if (slot.is_object()) throw ConfigError("config key '" + path + "' is a section, not a value");
    // ints may widen to doubles, but nothing else converts silently
    bool ok = (slot.type() == value.type()) ||
              (slot.is_number_float() && value.is_number_integer()) ||
              (slot.is_number_integer() && value.is_number_integer()) ||
              (slot.is_number_unsigned() && value.is_number_integer()) ||
              (slot.is_number_integer() && value.is_number_unsigned()) ||
              (slot.is_array() && value.is_array());
    if (!ok) throw ConfigError("config key '" + path + "' has the wrong type");
    slot = value;
}

void merge_strict(json& target, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!target.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
        if (target[it.key()].is_object()) {
            merge_strict(target[it.key()], it.value(), path);
        } else {
            assign_leaf(target, it.key(), it.value(), path);
        }
    }
}

void apply_override(json& target, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + kv);
    std::string key = kv.substr(0, eq);
    std::string raw = kv.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // bare strings need no quotes
    }
    // walk the dotted path
    json* node = &target;
    std::string path;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("override key is empty");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        path = path.empty() ? parts[i] : path + "." + parts[i];
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            throw ConfigError("unknown config key '" + path + "'");
        node = &(*node)[parts[i]];
    }
    path = path.empty() ? parts.back() : path + "." + parts.back();
    assign_leaf(*node, parts.back(), value, path);
}

template <typename T>
T get(const json& j, const char* sec, const char* key) {
    try {
        return j.at(sec).at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + sec + "." + key + "': " + e.what());
    }
}

Config config_from_resolved(const json& j) {
    Config c;
    c.model.stage_widths = get<std::vector<int>>(j, "model", "stage_widths");
    c.model.la_blocks = get<int>(j, "model", "la_blocks");
    c.model.k = get<int>(j, "model", "k");
    c.model.downsample_ratio = get<int>(j, "model", "downsample_ratio");
    c.model.grouper = get<std::string>(j, "model", "grouper");
    c.model.ball_radius = get<double>(j, "model", "ball_radius");
    c.model.use_cra = get<bool>(j, "model", "use_cra");

    c.model.cra.group_size = get<int>(j, "cra", "group_size");
    c.model.cra.zeta = get<double>(j, "cra", "zeta");
    c.model.cra.alpha_n = get<double>(j, "cra", "alpha_n");
    c.model.cra.eps = get<double>(j, "cra", "eps");
    c.model.cra.phi_l = get<double>(j, "cra", "phi_l");
    c.model.cra.phi_h = get<double>(j, "cra", "phi_h");
    c.model.cra.full_grad = get<bool>(j, "cra", "full_grad");
    c.model.cra.scalar_sign = get<bool>(j, "cra", "scalar_sign");
    c.model.cra_init_a = get<double>(j, "cra", "init_a");
    c.model.cra_init_b = get<double>(j, "cra", "init_b");
    c.model.cra_init_c = get<double>(j, "cra", "init_c");

    c.loss.lambda1 = get<double>(j, "loss", "lambda1");
    c.loss.lambda2 = get<double>(j, "loss", "lambda2");
    c.loss.label_smoothing = get<double>(j, "loss", "label_smoothing");
    c.loss.orth_centered = get<bool>(j, "loss", "orth_centered");

    c.data.task = get<std::string>(j, "data", "task");
    c.data.scenes = get<int>(j, "data", "scenes");
    c.data.test_scenes = get<int>(j, "data", "test_scenes");
    c.data.points = get<int>(j, "data", "points");
    c.data.noise = get<double>(j, "data", "noise");
    c.data.band_width = get<double>(j, "data", "band_width");
    c.data.contamination = get<double>(j, "data", "contamination");
    c.data.shapes = get<std::vector<std::string>>(j, "data", "shapes");
    c.data.augment = get<bool>(j, "data", "augment");
    c.data.source = get<std::string>(j, "data", "source");

    c.train.epochs = get<int>(j, "train", "epochs");
    c.train.batch_size = get<int>(j, "train", "batch_size");
    c.train.lr_init = get<double>(j, "train", "lr_init");
    c.train.lr_final = get<double>(j, "train", "lr_final");
    c.train.weight_decay = get<double>(j, "train", "weight_decay");
    c.train.seed = get<std::uint64_t>(j, "train", "seed");
    c.train.schedule = get<std::string>(j, "train", "schedule");
    c.train.ablation = get<std::string>(j, "train", "ablation");
    c.train.ablation_table = get<std::string>(j, "train", "ablation_table");
    c.train.early_stop_oa = get<double>(j, "train", "early_stop_oa");
    c.train.log_steps = get<bool>(j, "train", "log_steps");
    c.train.eval_each_epoch = get<bool>(j, "train", "eval_each_epoch");
    c.train.init_checkpoint = get<std::string>(j, "train", "init_checkpoint");

    c.eval_checkpoint = get<std::string>(j, "eval", "checkpoint");
    c.gradcheck_suites = get<std::vector<std::string>>(j, "gradcheck", "suites");
    c.stats_checkpoint = get<std::string>(j, "stats", "checkpoint");
    c.stats_dump = get<bool>(j, "stats", "dump");
    c.ablate_variants = get<std::vector<std::string>>(j, "ablate", "variants");
    c.ablate_seeds = get<std::vector<std::uint64_t>>(j, "ablate", "seeds");
    c.sweep_g = get<std::vector<int>>(j, "sweep", "g_values");

    c.finalize();
    return c;
}

void validate_config(const Config& c) {
    if (c.model.stage_widths.empty()) throw ConfigError("model.stage_widths must be nonempty");
    for (int w : c.model.stage_widths)
        if (w < 1) throw ConfigError("model.stage_widths entries must be >= 1");
    if (c.model.la_blocks < 1) throw ConfigError("model.la_blocks must be >= 1");
    if (c.model.k < 1) throw ConfigError("model.k must be >= 1");
    if (c.model.downsample_ratio < 2) throw ConfigError("model.downsample_ratio must be >= 2");
    if (c.model.grouper != "knn" && c.model.grouper != "ball")
        throw ConfigError("model.grouper must be knn or ball");
    if (c.model.cra.group_size < 1) throw ConfigError("cra.group_size must be >= 1");
    if (c.model.cra.zeta <= 0.0 || c.model.cra.zeta >= 1.0) throw ConfigError("cra.zeta must be in (0,1)");
    if (c.model.cra.alpha_n <= 0.0) throw ConfigError("cra.alpha_n must be > 0");
    if (c.model.cra.eps <= 0.0 || c.model.cra.eps > 1e-3)
        throw ConfigError("cra.eps must be in (0, 1e-3]");
    if (!(c.model.cra.phi_l > 0.0 && c.model.cra.phi_l < c.model.cra.phi_h))
        throw ConfigError("cra bounds need 0 < phi_l < phi_h");
    if (c.loss.lambda1 < 0.0 || c.loss.lambda2 < 0.0) throw ConfigError("loss weights must be >= 0");
    if (c.loss.label_smoothing < 0.0 || c.loss.label_smoothing >= 1.0)
        throw ConfigError("loss.label_smoothing must be in [0,1)");
    if (c.data.task != "classification" && c.data.task != "segmentation")
        throw ConfigError("data.task must be classification or segmentation");
    if (c.data.points < 64) throw ConfigError("data.points must be >= 64");
    if (c.data.scenes < 1) throw ConfigError("data.scenes must be >= 1");
    if (c.data.contamination < 0.0 || c.data.contamination > 1.0)
        throw ConfigError("data.contamination must be in [0,1]");
    if (!c.data.segmentation() && c.data.shapes.empty())
        throw ConfigError("data.shapes must be nonempty for classification");
    if (c.train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (c.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (c.train.lr_init <= 0.0 || c.train.lr_final <= 0.0)
        throw ConfigError("learning rates must be > 0");
    if (c.train.schedule != "cosine") throw ConfigError("train.schedule must be cosine");
    if (c.train.ablation_table != "main" && c.train.ablation_table != "calib")
        throw ConfigError("train.ablation_table must be main or calib");
    static const char* kVariants[] = {"full", "baseline", "A", "B", "C", "D"};
    bool found = false;
    for (const char* v : kVariants) found = found || c.train.ablation == v;
    if (!found) throw ConfigError("train.ablation must be one of full, baseline, A, B, C, D");
}

}  // namespace

void Config::finalize() {
    model.segmentation = data.segmentation();
    model.num_classes = data.num_classes();

    const std::string& v = train.ablation;
    effective_lambda1 = loss.lambda1;
    effective_lambda2 = loss.lambda2;
    if (v == "baseline") {
        model.use_cra = false;
        effective_lambda1 = effective_lambda2 = 0.0;
    } else if (v != "full" && v != "D") {
        effective_lambda1 = effective_lambda2 = 0.0;
    }
    if (v == "full" || v == "baseline") {
        model.variant = CraVariant{};
    } else if (train.ablation_table == "main") {
        // A: raw channel weights; B: + three-level calibration; C: + learnable
        // scaling; D: C + loss constraint
        model.variant.use_pd = v != "A";
        model.variant.calibrate_pd = v != "A";
        model.variant.learnable_scale = v == "C" || v == "D";
    } else {
        // calibration decomposition: A: pc only; B: + pd weighting;
        // C: + pn-driven calibration; D: + learnable scaling
        model.variant.use_pd = v != "A";
        model.variant.calibrate_pd = v == "C" || v == "D";
        model.variant.learnable_scale = v == "D";
        effective_lambda1 = effective_lambda2 = 0.0;
    }
    if (!model.use_cra) effective_lambda2 = 0.0;
}

std::string config_to_json(const Config& c) {
    json j;
    j["model"] = {{"stage_widths", c.model.stage_widths},
                  {"la_blocks", c.model.la_blocks},
                  {"k", c.model.k},
                  {"downsample_ratio", c.model.downsample_ratio},
                  {"grouper", c.model.grouper},
                  {"ball_radius", c.model.ball_radius},
                  {"use_cra", c.model.use_cra}};
    j["cra"] = {{"group_size", c.model.cra.group_size},
                {"zeta", c.model.cra.zeta},
                {"alpha_n", c.model.cra.alpha_n},
                {"eps", c.model.cra.eps},
                {"phi_l", c.model.cra.phi_l},
                {"phi_h", c.model.cra.phi_h},
                {"init_a", c.model.cra_init_a},
                {"init_b", c.model.cra_init_b},
                {"init_c", c.model.cra_init_c},
                {"full_grad", c.model.cra.full_grad},
                {"scalar_sign", c.model.cra.scalar_sign}};
    j["loss"] = {{"lambda1", c.loss.lambda1},
                 {"lambda2", c.loss.lambda2},
                 {"label_smoothing", c.loss.label_smoothing},
                 {"orth_centered", c.loss.orth_centered}};
    j["data"] = {{"task", c.data.task},
                 {"scenes", c.data.scenes},
                 {"test_scenes", c.data.test_scenes},
                 {"points", c.data.points},
                 {"noise", c.data.noise},
                 {"band_width", c.data.band_width},
                 {"contamination", c.data.contamination},
                 {"shapes", c.data.shapes},
                 {"augment", c.data.augment},
                 {"source", c.data.source}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"lr_init", c.train.lr_init},
                  {"lr_final", c.train.lr_final},
                  {"weight_decay", c.train.weight_decay},
                  {"seed", c.train.seed},
                  {"schedule", c.train.schedule},
                  {"ablation", c.train.ablation},
                  {"ablation_table", c.train.ablation_table},
                  {"early_stop_oa", c.train.early_stop_oa},
                  {"log_steps", c.train.log_steps},
                  {"eval_each_epoch", c.train.eval_each_epoch},
                  {"init_checkpoint", c.train.init_checkpoint}};
    j["eval"] = {{"checkpoint", c.eval_checkpoint}};
    j["gradcheck"] = {{"suites", c.gradcheck_suites}};
    j["stats"] = {{"checkpoint", c.stats_checkpoint}, {"dump", c.stats_dump}};
    j["ablate"] = {{"variants", c.ablate_variants}, {"seeds", c.ablate_seeds}};
    j["sweep"] = {{"g_values", c.sweep_g}};
    return j.dump(2);
}

Config config_from_json_text(const std::string& text, const std::vector<std::string>& overrides) {
    json user;
    try {
        user = text.empty() ? json::object() : json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    // run.json records are accepted as configs directly
    if (user.is_object() && user.contains("config") && user.contains("command"))
        user = user.at("config");

    json resolved = defaults_json();
    merge_strict(resolved, user, "");
    for (const auto& kv : overrides) apply_override(resolved, kv);
    Config c = config_from_resolved(resolved);
    validate_config(c);
    return c;
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    if (path.empty()) return config_from_json_text("", overrides);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str(), overrides);
}

std::string run_record_json(const std::string& command, const Config& cfg,
                            const std::string& out_dir) {
    json j;
    j["command"] = command;
    j["seed"] = cfg.train.seed;
    j["out"] = out_dir;
    j["config"] = json::parse(config_to_json(cfg));
    j["versions"] = {{"pointcra", "0.1.0"}, {"run_format", 1}};
    return j.dump(2);
}

}  // namespace pointcra
