#include "hsq/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace hsq::config {

namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& out, bool& found) {
    if (!j.contains(key)) return;
    found = true;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("config key \"") + key + "\" has the wrong type");
    }
}

} // namespace

void apply_json(PipelineConfig& cfg, const json& j) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    static const char* known[] = {
        "k", "tau", "epsilon", "use_graph", "normalize_mode", "gamma", "lambda",
        "K_n", "learning_rate", "batch_size", "epochs", "staged_mode", "M", "K",
        "iters", "alternations", "icm_sweeps", "kmeans_iters", "perturb", "topN",
        "R", "seed", "threads"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return key == k; }) == std::end(known))
            throw ValidationError("unknown config key \"" + key + "\"");
    }
    bool found = false;
    read_key(j, "k", cfg.k, found);
    read_key(j, "tau", cfg.tau, found);
    read_key(j, "epsilon", cfg.epsilon, found);
    read_key(j, "use_graph", cfg.use_graph, found);
    read_key(j, "normalize_mode", cfg.normalize_mode, found);
    read_key(j, "gamma", cfg.gamma, found);
    read_key(j, "lambda", cfg.lambda, found);
    read_key(j, "K_n", cfg.negatives, found);
    read_key(j, "learning_rate", cfg.learning_rate, found);
    read_key(j, "batch_size", cfg.batch_size, found);
    read_key(j, "epochs", cfg.epochs, found);
    read_key(j, "staged_mode", cfg.staged_mode, found);
    read_key(j, "M", cfg.num_books, found);
    read_key(j, "K", cfg.num_words, found);
    read_key(j, "iters", cfg.iters, found);
    read_key(j, "alternations", cfg.iters, found);
    read_key(j, "icm_sweeps", cfg.icm_sweeps, found);
    read_key(j, "kmeans_iters", cfg.kmeans_iters, found);
    read_key(j, "perturb", cfg.perturb, found);
    read_key(j, "topN", cfg.top_n, found);
    read_key(j, "R", cfg.cutoff, found);
    read_key(j, "seed", cfg.seed, found);
    read_key(j, "threads", cfg.threads, found);
}

namespace {

json parse_flat_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    json j = json::object();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto begin = s.find_first_not_of(" \t\r");
            if (begin == std::string::npos) return std::string();
            const auto end = s.find_last_not_of(" \t\r");
            return s.substr(begin, end - begin + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": expected key = value");
        const std::string key = strip(line.substr(0, eq));
        std::string value = strip(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": expected key = value");
        if (value == "true") {
            j[key] = true;
        } else if (value == "false") {
            j[key] = false;
        } else {
            try {
                std::size_t used = 0;
                if (value.find_first_of(".eE") != std::string::npos) {
                    const double d = std::stod(value, &used);
                    if (used != value.size()) throw std::invalid_argument(value);
                    j[key] = d;
                } else {
                    const long long n = std::stoll(value, &used);
                    if (used != value.size()) throw std::invalid_argument(value);
                    j[key] = n;
                }
            } catch (const std::exception&) {
                throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                      ": cannot parse value \"" + value + "\"");
            }
        }
    }
    return j;
}

} // namespace

PipelineConfig load_config_file(const std::filesystem::path& path) {
    PipelineConfig cfg;
    json j;
    if (path.extension() == ".json") {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open config " + path.string());
        j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ValidationError(path.string() + ": malformed JSON");
    } else {
        j = parse_flat_config(path);
    }
    apply_json(cfg, j);
    return cfg;
}

void validate(const PipelineConfig& cfg) {
    const auto require = [](bool ok, const char* what) {
        if (!ok) throw ValidationError(std::string("config: ") + what);
    };
    require(cfg.k >= 0, "k must be >= 0");
    require(cfg.tau >= -1.0 && cfg.tau <= 1.0, "tau must be in [-1, 1]");
    require(cfg.epsilon > 0.0, "epsilon must be > 0");
    require(cfg.gamma > 0.0, "gamma must be > 0");
    require(cfg.lambda >= 0.0, "lambda must be >= 0");
    require(cfg.negatives >= 0, "K_n must be >= 0");
    require(cfg.learning_rate >= 0.0, "learning_rate must be >= 0");
    require(cfg.batch_size > 0, "batch_size must be > 0");
    require(cfg.epochs >= 0, "epochs must be >= 0");
    require(cfg.num_books > 0, "M must be > 0");
    require(cfg.num_words > 1, "K must be > 1");
    require((cfg.num_words & (cfg.num_words - 1)) == 0, "K must be a power of two");
    require(cfg.num_words <= 65536, "K must be <= 65536");
    require(cfg.iters > 0, "iters must be > 0");
    require(cfg.icm_sweeps > 0, "icm_sweeps must be > 0");
    require(cfg.kmeans_iters > 0, "kmeans_iters must be > 0");
    require(cfg.top_n > 0, "topN must be > 0");
    require(cfg.cutoff > 0, "R must be > 0");
    require(cfg.threads >= 0, "threads must be >= 0");
}

json to_json(const PipelineConfig& cfg) {
    json j;
    j["k"] = cfg.k;
    j["tau"] = cfg.tau;
    j["epsilon"] = cfg.epsilon;
    j["use_graph"] = cfg.use_graph;
    j["normalize_mode"] = cfg.normalize_mode;
    j["gamma"] = cfg.gamma;
    j["lambda"] = cfg.lambda;
    j["K_n"] = cfg.negatives;
    j["learning_rate"] = cfg.learning_rate;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["staged_mode"] = cfg.staged_mode;
    j["M"] = cfg.num_books;
    j["K"] = cfg.num_words;
    j["iters"] = cfg.iters;
    j["icm_sweeps"] = cfg.icm_sweeps;
    j["kmeans_iters"] = cfg.kmeans_iters;
    j["perturb"] = cfg.perturb;
    j["topN"] = cfg.top_n;
    j["R"] = cfg.cutoff;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    return j;
}

std::string config_hash(const PipelineConfig& cfg) {
    const std::string dump = to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : dump) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

hypersphere::TrainConfig train_config(const PipelineConfig& cfg) {
    hypersphere::TrainConfig t;
    t.gamma = cfg.gamma;
    t.lambda = cfg.lambda;
    t.negatives = cfg.negatives;
    t.learning_rate = cfg.learning_rate;
    t.batch_size = cfg.batch_size;
    t.epochs = cfg.epochs;
    t.alternations = cfg.iters;
    t.seed = cfg.seed;
    t.staged_mode = cfg.staged_mode;
    t.normalize = cfg.normalize_mode;
    t.threads = cfg.threads;
    return t;
}

quantizer::QuantConfig quant_config(const PipelineConfig& cfg) {
    quantizer::QuantConfig q;
    q.num_books = cfg.num_books;
    q.num_words = cfg.num_words;
    q.alternations = cfg.iters;
    q.icm_sweeps = cfg.icm_sweeps;
    q.kmeans_iterations = cfg.kmeans_iters;
    q.perturb = cfg.perturb;
    q.seed = cfg.seed;
    q.threads = cfg.threads;
    return q;
}

tag_semantics::SphereOptions sphere_options(const PipelineConfig& cfg) {
    tag_semantics::SphereOptions s;
    s.k = cfg.k;
    s.tau = cfg.tau;
    s.epsilon = cfg.epsilon;
    s.use_graph = cfg.use_graph;
    s.normalize = cfg.normalize_mode;
    s.threads = cfg.threads;
    return s;
}

} // namespace hsq::config
