#include "dnd/config.hpp"

#include <fstream>
#include <functional>
#include <stdexcept>

#include "dnd/corpus.hpp"

namespace dnd {

namespace {

using nlohmann::json;

struct Field {
    std::function<void(DndConfig&, const json&)> set;
    std::function<json(const DndConfig&)> get;
};

template <typename T>
T as(const json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw std::invalid_argument("not a count");
        }
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw std::invalid_argument("not a boolean");
        }
        if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw std::invalid_argument("not a number");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw ContractError("config key '" + key + "': invalid value " + v.dump());
    }
}

#define DND_FIELD(KEY, MEMBER, TYPE)                                                   \
    {                                                                                  \
        KEY, Field {                                                                   \
            [](DndConfig& c, const json& v) { c.MEMBER = as<TYPE>(v, KEY); },          \
                [](const DndConfig& c) { return json(c.MEMBER); }                      \
        }                                                                              \
    }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        DND_FIELD("model.vocab_size", model.vocab_size, std::size_t),
        DND_FIELD("model.d_model", model.d_model, std::size_t),
        DND_FIELD("model.n_heads", model.n_heads, std::size_t),
        DND_FIELD("model.d_head", model.d_head, std::size_t),
        DND_FIELD("model.n_layers", model.n_layers, std::size_t),
        DND_FIELD("model.d_ff", model.d_ff, std::size_t),
        DND_FIELD("model.max_seq_len", model.max_seq_len, std::size_t),
        DND_FIELD("model.rope_theta", model.rope_theta, double),
        DND_FIELD("model.norm_eps", model.norm_eps, double),
        DND_FIELD("dnd.enabled", dnd_enabled, bool),
        DND_FIELD("dnd.l_start", l_start, std::int64_t),
        DND_FIELD("dnd.l_end", l_end, std::int64_t),
        DND_FIELD("dnd.beta_init", beta_init, double),
        DND_FIELD("dnd.tau_init", tau_init, double),
        DND_FIELD("controller.k_target", controller.k_target, double),
        DND_FIELD("controller.alpha", controller.alpha, double),
        DND_FIELD("controller.gamma", controller.gamma, double),
        DND_FIELD("controller.buffer_capacity", controller.buffer_capacity, std::size_t),
        DND_FIELD("controller.sync_period", controller.sync_period, std::size_t),
        DND_FIELD("controller.ema_enabled", controller.ema_enabled, bool),
        DND_FIELD("controller.frozen", controller.frozen, bool),
        DND_FIELD("loss.lambda_sd", loss.lambda_sd, double),
        DND_FIELD("loss.lambda_dp", loss.lambda_dp, double),
        DND_FIELD("loss.lambda_z", loss.lambda_z, double),
        DND_FIELD("optim.lr_max", optimizer.lr_max, double),
        DND_FIELD("optim.lr_min", optimizer.lr_min, double),
        DND_FIELD("optim.beta1", optimizer.beta1, double),
        DND_FIELD("optim.beta2", optimizer.beta2, double),
        DND_FIELD("optim.eps", optimizer.eps, double),
        DND_FIELD("optim.weight_decay", optimizer.weight_decay, double),
        DND_FIELD("optim.grad_clip", optimizer.grad_clip, double),
        DND_FIELD("optim.warmup_steps", optimizer.warmup_steps, std::size_t),
        DND_FIELD("train.seed", seed, std::uint64_t),
        DND_FIELD("train.batch_size", batch_size, std::size_t),
        DND_FIELD("train.seq_len", seq_len, std::size_t),
        DND_FIELD("train.steps", steps, std::size_t),
        DND_FIELD("train.data", data_path, std::string),
        DND_FIELD("train.out_dir", out_dir, std::string),
        DND_FIELD("train.checkpoint_every", checkpoint_every, std::size_t),
        DND_FIELD("train.log_scores", log_scores, bool),
    };
    return table;
}

#undef DND_FIELD

json parse_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);
    return v;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

DndSettings DndConfig::dnd_settings() const {
    DndSettings s = DndSettings::default_for(model.n_layers);
    s.enabled = dnd_enabled;
    if (l_start >= 0) s.l_start = static_cast<std::size_t>(l_start);
    if (l_end >= 0) s.l_end = static_cast<std::size_t>(l_end);
    s.beta_init = beta_init;
    s.tau_init = tau_init;
    s.buffer_capacity = controller.buffer_capacity;
    return s;
}

void DndConfig::validate() const {
    model.validate();
    controller.validate();
    const auto s = dnd_settings();
    s.validate(model);
    if (dnd_enabled && model.n_layers >= 4 && (s.l_start < 1 || s.l_end > model.n_layers - 2)) {
        throw ContractError("dnd layer range must keep the first and last layers plain");
    }
    if (seq_len < 2 || seq_len > model.max_seq_len) {
        throw ContractError("train.seq_len must lie in [2, model.max_seq_len]");
    }
    if (batch_size == 0) throw ContractError("train.batch_size must be positive");
    if (optimizer.lr_min > optimizer.lr_max || optimizer.lr_min < 0.0) {
        throw ContractError("optim.lr_min must lie in [0, lr_max]");
    }
    if (optimizer.grad_clip <= 0.0) throw ContractError("optim.grad_clip must be positive");
    if (loss.lambda_sd < 0.0 || loss.lambda_dp < 0.0 || loss.lambda_z < 0.0) {
        throw ContractError("loss weights must be non-negative");
    }
}

nlohmann::json DndConfig::to_json() const {
    json j = json::object();
    for (const auto& [key, field] : fields()) j[key] = field.get(*this);
    return j;
}

DndConfig DndConfig::from_json(const nlohmann::json& flat) {
    DndConfig cfg;
    for (const auto& [key, value] : flat.items()) {
        auto it = fields().find(key);
        if (it == fields().end()) throw ContractError("unknown config key '" + key + "'");
        it->second.set(cfg, value);
    }
    return cfg;
}

void apply_override(DndConfig& cfg, const std::string& key, const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ContractError("unknown config key '" + key + "'");
    json v = parse_value(value);
    if (key == "train.data" || key == "train.out_dir") v = json(value);
    it->second.set(cfg, v);
}

void apply_override(DndConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ContractError("override '" + assignment + "' is not key=value");
    apply_override(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::map<std::string, std::string> parse_key_value_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Comments start at '#' outside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ContractError(path.string() + ":" + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ContractError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        out[section.empty() ? key : section + "." + key] = value;
    }
    return out;
}

DndConfig load_config(const std::filesystem::path& path) {
    DndConfig cfg;
    for (const auto& [key, value] : parse_key_value_file(path)) {
        if (key.rfind("flops.", 0) == 0) continue;
        apply_override(cfg, key, value);
    }
    return cfg;
}

void apply_flops_override(FlopsParams& p, const std::string& key, double value) {
    static const std::map<std::string, double FlopsParams::*> keys = {
        {"S", &FlopsParams::seq_len},        {"H", &FlopsParams::hidden},
        {"N_h", &FlopsParams::n_heads},      {"d_h", &FlopsParams::head_dim},
        {"L_total", &FlopsParams::total_layers}, {"L_dnd", &FlopsParams::dnd_layers},
        {"I_moe", &FlopsParams::moe_inner},  {"k", &FlopsParams::active_experts},
        {"r", &FlopsParams::ratio},
    };
    auto it = keys.find(key);
    if (it == keys.end()) throw ContractError("unknown flops key '" + key + "'");
    p.*(it->second) = value;
}

FlopsParams load_flops_params(const std::filesystem::path& path) {
    FlopsParams p;
    for (const auto& [key, value] : parse_key_value_file(path)) {
        if (key.rfind("flops.", 0) != 0) continue;
        json v = parse_value(value);
        if (!v.is_number()) throw ContractError("flops key '" + key + "' needs a number");
        apply_flops_override(p, key.substr(6), v.get<double>());
    }
    return p;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, _] : fields()) keys.push_back(key);
    return keys;
}

}  // namespace dnd
