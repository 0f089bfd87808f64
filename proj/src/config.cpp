#include "invflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace invflow {

namespace {

struct Key {
    const char* name;
    const char* fallback;
    const char* help;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long long to_int(const std::string& v) {
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected an integer");
    return out;
}

int to_int32(const std::string& v) {
    const long long x = to_int(v);
    if (x < -2147483647LL || x > 2147483647LL) throw std::invalid_argument("integer out of range");
    return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw std::invalid_argument("expected a non-negative integer");
    return out;
}

Real to_real(const std::string& v) {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("expected a number");
    return static_cast<Real>(x);
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected true or false");
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        {"height", "8", "image height", [](RunConfig& c, const std::string& v) { c.model.height = c.data.height = to_int32(v); }},
        {"width", "8", "image width", [](RunConfig& c, const std::string& v) { c.model.width = c.data.width = to_int32(v); }},
        {"channels", "1", "image channels", [](RunConfig& c, const std::string& v) { c.model.channels = c.data.channels = to_int32(v); }},
        {"levels", "2", "number of levels L", [](RunConfig& c, const std::string& v) { c.model.levels = to_int32(v); }},
        {"depth", "4", "flow steps per level D", [](RunConfig& c, const std::string& v) { c.model.depth = to_int32(v); }},
        {"hidden", "64", "coupling network width", [](RunConfig& c, const std::string& v) { c.model.hidden = to_int32(v); }},
        {"kernel_size", "3", "invertible convolution window (odd)", [](RunConfig& c, const std::string& v) { c.model.kernel_size = to_int32(v); }},
        {"coupling", "quad", "quad | affine", [](RunConfig& c, const std::string& v) { c.model.coupling = parse_coupling(v); }},
        {"mixer", "invconv", "invconv | conv1x1", [](RunConfig& c, const std::string& v) { c.model.mixer = parse_mixer(v); }},
        {"scale_bound", "2", "coupling log-scale bound", [](RunConfig& c, const std::string& v) { c.model.scale_bound = to_real(v); }},
        {"squeeze", "true", "squeeze at the start of every level", [](RunConfig& c, const std::string& v) { c.model.squeeze = to_bool(v); }},
        {"dataset", "checkerboard", "gaussian-blobs | checkerboard | bars | image-folder | gaussian-iid | uniform", [](RunConfig& c, const std::string& v) { c.data.kind = parse_dataset_kind(v); }},
        {"dataset_size", "512", "number of images (cap for image-folder)", [](RunConfig& c, const std::string& v) { c.data.size = to_int32(v); }},
        {"data_seed", "1", "dataset generation seed", [](RunConfig& c, const std::string& v) { c.data.seed = to_u64(v); }},
        {"image_folder", "", "directory of .pgm/.ppm files for image-folder", [](RunConfig& c, const std::string& v) { c.data.folder = v; }},
        {"gaussian_mean", "128", "gaussian-iid pixel mean", [](RunConfig& c, const std::string& v) { c.data.gaussian_mean = to_real(v); }},
        {"gaussian_std", "32", "gaussian-iid pixel standard deviation", [](RunConfig& c, const std::string& v) { c.data.gaussian_std = to_real(v); }},
        {"epochs", "50", "training epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_int32(v); }},
        {"batch_size", "64", "minibatch size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_int32(v); }},
        {"lr", "0.001", "Adam learning rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = to_real(v); }},
        {"seed", "0", "model initialization and training seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64(v); }},
        {"threads", "1", "worker threads", [](RunConfig& c, const std::string& v) { c.train.threads = to_int32(v); }},
        {"clip_norm", "50", "global gradient norm clip (0 disables)", [](RunConfig& c, const std::string& v) { c.train.clip_norm = to_real(v); }},
        {"actnorm_init", "data", "data | identity", [](RunConfig& c, const std::string& v) {
             if (v == "data") c.train.actnorm_init = ActNormInit::Data;
             else if (v == "identity") c.train.actnorm_init = ActNormInit::Identity;
             else throw std::invalid_argument("expected data or identity");
         }},
        {"identity_init", "false", "start every layer at the identity map", [](RunConfig& c, const std::string& v) { c.train.identity_init = to_bool(v); }},
        {"eval_seed", "12345", "dequantization seed for evaluation", [](RunConfig& c, const std::string& v) { c.train.eval_seed = to_u64(v); }},
        {"log_wall_time", "true", "record wall time in the metrics file (false writes 0)", [](RunConfig& c, const std::string& v) { c.train.log_wall_time = to_bool(v); }},
        {"checkpoint", "model.ckpt", "checkpoint output path", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
        {"metrics", "metrics.csv", "metrics CSV output path", [](RunConfig& c, const std::string& v) { c.metrics = v; }},
    };
    return table;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
        if (key != k.name) continue;
        try {
            k.set(cfg, value);
        } catch (const std::exception& e) {
            throw ConfigError("bad value '" + value + "' for " + key + ": " + e.what());
        }
        return;
    }
    throw ConfigError("unknown key '" + key + "'");
}

RunConfig parse_config(std::istream& in, const std::string& origin) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    try {
        cfg.model.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    if (cfg.train.epochs < 0) throw ConfigError(origin + ": epochs must be non-negative");
    if (cfg.train.batch_size < 1) throw ConfigError(origin + ": batch_size must be positive");
    if (cfg.train.threads < 1) throw ConfigError(origin + ": threads must be positive");
    if (cfg.data.kind == DatasetKind::ImageFolder && cfg.data.folder.empty())
        throw ConfigError(origin + ": image-folder needs image_folder");
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    return parse_config(in, path.string());
}

std::string default_config_text() {
    std::ostringstream out;
    for (const auto& k : keys()) out << "# " << k.help << "\n" << k.name << " = " << k.fallback << "\n";
    return out.str();
}

}  // namespace invflow
