#ifndef DIFFEDIT_CONFIG_HPP
#define DIFFEDIT_CONFIG_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "diffedit/util.hpp"

namespace diffedit {

enum class ConfigType { integer, real, text, boolean };

struct ConfigKey {
    std::string name;
    ConfigType type;
    std::string default_value;
    std::string help;
};

// Every exposed parameter, one namespace per module. Plain `key = value`
// files with '#' comments; unknown keys are rejected, missing keys fall back
// to these defaults.
inline const std::vector<ConfigKey>& config_registry() {
    static const std::vector<ConfigKey> keys = {
        {"seed", ConfigType::integer, "1234", "master seed for every derived stream"},
        {"threads", ConfigType::integer, "0", "worker threads; 0 = hardware count"},

        {"data.image_size", ConfigType::integer, "16", "toy face edge length in pixels"},
        {"data.train_per_class", ConfigType::integer, "200", "training faces per emotion"},
        {"data.test_per_class", ConfigType::integer, "50", "held-out faces per emotion"},

        {"schedule.T", ConfigType::integer, "100", "diffusion horizon T_DDPM"},
        {"schedule.beta_start", ConfigType::real, "0.001", "linear schedule start"},
        {"schedule.beta_end", ConfigType::real, "0.2", "linear schedule end"},

        {"first_stage.mode", ConfigType::text, "identity", "identity | ae | vq-ae"},
        {"first_stage.f", ConfigType::integer, "4", "downsample factor (power of two)"},
        {"first_stage.c", ConfigType::integer, "3", "latent channels"},
        {"first_stage.hidden", ConfigType::integer, "24", "patch MLP hidden width"},
        {"first_stage.codebook", ConfigType::integer, "64", "vq codebook size"},
        {"first_stage.epochs", ConfigType::integer, "120", "first-stage training epochs"},
        {"first_stage.lr", ConfigType::real, "0.003", "first-stage learning rate"},
        {"first_stage.batch", ConfigType::integer, "32", "first-stage batch size"},

        {"denoiser.width", ConfigType::integer, "256", "residual MLP width"},
        {"denoiser.blocks", ConfigType::integer, "3", "residual blocks"},
        {"denoiser.d_cls", ConfigType::integer, "32", "class embedding dimension"},

        {"train.p_uncond", ConfigType::real, "0.2", "label dropout probability"},
        {"train.lr", ConfigType::real, "0.001", "denoiser learning rate (stepped down 3x per stage)"},
        {"train.batch", ConfigType::integer, "64", "denoiser batch size"},
        {"train.epochs", ConfigType::integer, "90", "denoiser training epochs"},
        {"train.optimizer", ConfigType::text, "adaptive-moment", "adaptive-moment | plain-sgd"},
        {"train.weight_decay", ConfigType::real, "0", "decoupled weight decay"},

        {"oracle.epochs", ConfigType::integer, "40", "evaluator training epochs"},
        {"oracle.lr", ConfigType::real, "0.0015", "evaluator learning rate"},

        {"edit.t_ddim", ConfigType::integer, "20", "DDIM steps for editing"},
        {"edit.t0", ConfigType::integer, "50", "editing strength"},
        {"edit.eta", ConfigType::real, "0", "regeneration stochasticity"},
        {"edit.gamma", ConfigType::real, "3", "classifier-free guidance scale"},
        {"edit.gamma_invert", ConfigType::real, "-1", "inversion-branch guidance; -1 = same as gamma"},

        {"finetune.lambda_dir", ConfigType::real, "2", "directional loss weight"},
        {"finetune.lambda_id", ConfigType::real, "1", "identity loss weight"},
        {"finetune.lambda_l2", ConfigType::real, "1", "pixel loss weight"},
        {"finetune.t_tune", ConfigType::integer, "6", "DDIM steps inside finetuning"},
        {"finetune.t0", ConfigType::integer, "50", "finetuning editing strength"},
        {"finetune.t_ddim", ConfigType::integer, "20", "inversion steps for latent precompute"},
        {"finetune.gamma", ConfigType::real, "1", "guidance scale during finetuning"},
        {"finetune.epochs", ConfigType::integer, "20", "finetuning epochs"},
        {"finetune.lr", ConfigType::real, "0.00025", "finetuning learning rate"},
        {"finetune.batch", ConfigType::integer, "4", "finetuning batch size"},
        {"finetune.per_class", ConfigType::integer, "50", "precomputed latents per class"},
        {"finetune.subsample", ConfigType::integer, "100", "latents sampled for tuning"},
        {"finetune.target", ConfigType::text, "happy", "target emotion name"},

        {"ablate.t0_list", ConfigType::text, "40,50,60", "editing strengths for the grid"},
        {"ablate.gamma_list", ConfigType::text, "1,2,3,4,5", "guidance scales for the grid"},
        {"ablate.t_ddim", ConfigType::integer, "20", "DDIM steps for the grid"},
        {"ablate.images", ConfigType::integer, "210", "test images per cell (before source-class exclusion)"},
        {"ablate.targets", ConfigType::text, "all", "comma list of target names, or 'all'"},
    };
    return keys;
}

// Flat typed key-value map with a canonical digest. Values are stored in
// canonical text form so the hash is stable under key reordering and
// formatting differences.
struct RunConfig {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) > 0; }

    const std::string& get_text(const std::string& key) const {
        auto it = values.find(key);
        require(it != values.end(), ErrorKind::config, "config: missing key " + key);
        return it->second;
    }

    int get_int(const std::string& key) const {
        try {
            return std::stoi(get_text(key));
        } catch (const std::exception&) {
            fail(ErrorKind::config, "config: key " + key + " is not an integer");
        }
    }

    double get_real(const std::string& key) const {
        try {
            return std::stod(get_text(key));
        } catch (const std::exception&) {
            fail(ErrorKind::config, "config: key " + key + " is not a real");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get_text(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail(ErrorKind::config, "config: key " + key + " is not a boolean");
    }

    void set(const std::string& key, const std::string& value) { values[key] = value; }

    std::string config_hash() const {
        // std::map iterates in key order, so the digest ignores insertion order
        uint64_t h = UINT64_C(0xCBF29CE484222325);
        for (const auto& [k, v] : values) h = fnv1a(k + "=" + v + "\n", h);
        return hex64(h);
    }

    std::string echo() const {
        std::string out;
        for (const auto& [k, v] : values) out += k + " = " + v + "\n";
        return out;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline std::string canonical_value(const ConfigKey& key, const std::string& raw) {
    switch (key.type) {
        case ConfigType::integer: {
            try {
                size_t used = 0;
                long long v = std::stoll(raw, &used);
                require(used == raw.size(), ErrorKind::config,
                        "config: key " + key.name + " has a malformed integer value '" + raw + "'");
                return std::to_string(v);
            } catch (const Error&) {
                throw;
            } catch (const std::exception&) {
                fail(ErrorKind::config,
                     "config: key " + key.name + " has a malformed integer value '" + raw + "'");
            }
        }
        case ConfigType::real: {
            try {
                size_t used = 0;
                double v = std::stod(raw, &used);
                require(used == raw.size(), ErrorKind::config,
                        "config: key " + key.name + " has a malformed real value '" + raw + "'");
                return format_double(v);
            } catch (const Error&) {
                throw;
            } catch (const std::exception&) {
                fail(ErrorKind::config,
                     "config: key " + key.name + " has a malformed real value '" + raw + "'");
            }
        }
        case ConfigType::boolean: {
            if (raw == "true" || raw == "1") return "true";
            if (raw == "false" || raw == "0") return "false";
            fail(ErrorKind::config,
                 "config: key " + key.name + " has a malformed boolean value '" + raw + "'");
        }
        case ConfigType::text:
        default:
            return raw;
    }
}

}  // namespace detail

inline RunConfig default_config() {
    RunConfig cfg;
    for (const ConfigKey& k : config_registry())
        cfg.values[k.name] = detail::canonical_value(k, k.default_value);
    return cfg;
}

// `key = value` lines, '#' starts a comment. Unknown keys are rejected;
// missing keys are filled from the registry defaults.
inline RunConfig parse_config(std::istream& in) {
    const auto& registry = config_registry();
    RunConfig cfg = default_config();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::config,
                "config: line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        auto it = std::find_if(registry.begin(), registry.end(),
                               [&key](const ConfigKey& k) { return k.name == key; });
        require(it != registry.end(), ErrorKind::config, "config: unknown key '" + key + "'");
        cfg.values[key] = detail::canonical_value(*it, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::config, "config: cannot open " + path);
    return parse_config(f);
}

}  // namespace diffedit

#endif  // DIFFEDIT_CONFIG_HPP
