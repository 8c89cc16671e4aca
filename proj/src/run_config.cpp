#include "kprnet/run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "kprnet/errors.hpp"

namespace kpr {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ArgumentError("config " + key + ": expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ArgumentError("config " + key + ": expected number, got '" + v + "'");
    }
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::istringstream in(v);
    std::string tok;
    while (std::getline(in, tok, ','))
        out.push_back(static_cast<int>(to_long(key, trim(tok))));
    if (out.empty()) throw ArgumentError("config " + key + ": empty list");
    return out;
}

std::set<int> to_int_set(const std::string& key, const std::string& v) {
    auto list = to_int_list(key, v);
    return {list.begin(), list.end()};
}

std::pair<int, int> to_dims(const std::string& key, const std::string& v) {
    auto x = v.find('x');
    if (x == std::string::npos)
        throw ArgumentError("config " + key + ": expected HxW, got '" + v + "'");
    return {static_cast<int>(to_long(key, v.substr(0, x))),
            static_cast<int>(to_long(key, v.substr(x + 1)))};
}

std::string join(const std::set<int>& s) {
    std::string out;
    for (int v : s) {
        if (!out.empty()) out += ",";
        out += std::to_string(v);
    }
    return out;
}

constexpr double kDegToRad = M_PI / 180.0;

}  // namespace

RunConfig::RunConfig() {
    if (const char* env = std::getenv("KPRNET_DATA")) data_root = env;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto i = [&] { return static_cast<int>(to_long(key, value)); };
    auto d = [&] { return to_double(key, value); };
    if (key == "proj.height") proj.height = i();
    else if (key == "proj.width") proj.width = i();
    else if (key == "proj.fov-up-deg") proj.fov_up = d() * kDegToRad;
    else if (key == "proj.fov-down-deg") proj.fov_down = d() * kDegToRad;
    else if (key == "proj.mode") {
        if (value == "spherical") proj.mode = ProjectionMode::Spherical;
        else if (value == "unfold") proj.mode = ProjectionMode::Unfold;
        else throw ArgumentError("config proj.mode: want spherical or unfold");
    } else if (key == "net.stem-channels") net.stem_channels = i();
    else if (key == "net.stage-channels") {
        auto chans = to_int_list(key, value);
        if (chans.size() != net.stages.size())
            throw ArgumentError("config net.stage-channels: want " +
                                std::to_string(net.stages.size()) + " values");
        for (std::size_t s = 0; s < chans.size(); ++s) net.stages[s].channels = chans[s];
    } else if (key == "net.blocks-per-stage") {
        for (auto& s : net.stages) s.blocks = i();
    } else if (key == "net.groups") {
        for (auto& s : net.stages) s.groups = i();
    } else if (key == "net.aspp-rates") net.aspp_rates = to_int_list(key, value);
    else if (key == "net.aspp-channels") net.aspp_channels = i();
    else if (key == "net.decoder-channels") net.decoder_channels = i();
    else if (key == "net.features") { net.out_channels = i(); kp.in_channels = net.out_channels; }
    else if (key == "net.circular-pad") net.circular_pad_width = to_long(key, value) != 0;
    else if (key == "kp.points") kp.num_kernel_points = i();
    else if (key == "kp.radius") kp.radius = d();
    else if (key == "kp.sigma") kp.sigma = d();
    else if (key == "kp.channels") kp.out_channels = i();
    else if (key == "knn.k") knn.k = i();
    else if (key == "knn.window") knn.window = i();
    else if (key == "knn.sigma") knn.sigma_gauss = d();
    else if (key == "knn.cutoff") knn.cutoff = d();
    else if (key == "train.lr") train.base_lr = d();
    else if (key == "train.momentum") train.momentum = d();
    else if (key == "train.weight-decay") train.weight_decay = d();
    else if (key == "train.epochs") train.epochs = i();
    else if (key == "train.warmup") train.warmup_iters = i();
    else if (key == "train.batch") train.batch_size = i();
    else if (key == "train.crop-width") train.crop_width = i();
    else if (key == "train.flip-prob") train.flip_prob = d();
    else if (key == "train.upsample") {
        auto [h, w] = to_dims(key, value);
        train.upsample_h = h;
        train.upsample_w = w;
    } else if (key == "seed") {
        seed = static_cast<std::uint64_t>(to_long(key, value));
        train.seed = seed;
    } else if (key == "jobs") jobs = i();
    else if (key == "data-root") data_root = value;
    // "<builtin>" is the echo placeholder for the default map, so a dumped
    // config can be loaded back verbatim.
    else if (key == "label-map") label_map_path = (value == "<builtin>" ? "" : value);
    else if (key == "split.train") split.train = to_int_set(key, value);
    else if (key == "split.val") split.val = to_int_set(key, value);
    else if (key == "split.test") split.test = to_int_set(key, value);
    else throw ArgumentError("config: unknown key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected key = value");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::validate() const {
    proj.validate();
    net.validate();
    knn.validate();
    train.validate();
    split.check_disjoint();
    if (kp.num_kernel_points < 1) throw ArgumentError("config kp.points: must be >= 1");
    if (kp.radius <= 0.0 || kp.sigma <= 0.0)
        throw ArgumentError("config: kp.radius and kp.sigma must be positive");
    if (kp.in_channels != net.out_channels)
        throw ArgumentError("config: kpconv input width must match net.features");
    if (jobs < 1) throw ArgumentError("config jobs: must be >= 1");
}

const LabelMap& RunConfig::label_map() const {
    if (label_map_path.empty()) return LabelMap::semantic_kitti();
    static LabelMap loaded;  // one user map per process is enough for the CLI
    static std::string loaded_path;
    if (loaded_path != label_map_path) {
        loaded = LabelMap::load(label_map_path);
        loaded_path = label_map_path;
    }
    return loaded;
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    out << "proj.height = " << proj.height << '\n';
    out << "proj.width = " << proj.width << '\n';
    out << "proj.fov-up-deg = " << proj.fov_up / kDegToRad << '\n';
    out << "proj.fov-down-deg = " << proj.fov_down / kDegToRad << '\n';
    out << "proj.mode = " << (proj.mode == ProjectionMode::Spherical ? "spherical" : "unfold")
        << '\n';
    out << "net.stem-channels = " << net.stem_channels << '\n';
    std::string chans;
    for (const auto& s : net.stages)
        chans += (chans.empty() ? "" : ",") + std::to_string(s.channels);
    out << "net.stage-channels = " << chans << '\n';
    out << "net.blocks-per-stage = " << net.stages[0].blocks << '\n';
    out << "net.groups = " << net.stages[0].groups << '\n';
    std::string rates;
    for (int r : net.aspp_rates) rates += (rates.empty() ? "" : ",") + std::to_string(r);
    out << "net.aspp-rates = " << rates << '\n';
    out << "net.aspp-channels = " << net.aspp_channels << '\n';
    out << "net.decoder-channels = " << net.decoder_channels << '\n';
    out << "net.features = " << net.out_channels << '\n';
    out << "net.circular-pad = " << (net.circular_pad_width ? 1 : 0) << '\n';
    out << "kp.points = " << kp.num_kernel_points << '\n';
    out << "kp.radius = " << kp.radius << '\n';
    out << "kp.sigma = " << kp.sigma << '\n';
    out << "kp.channels = " << kp.out_channels << '\n';
    out << "knn.k = " << knn.k << '\n';
    out << "knn.window = " << knn.window << '\n';
    out << "knn.sigma = " << knn.sigma_gauss << '\n';
    out << "knn.cutoff = " << knn.cutoff << '\n';
    out << "train.lr = " << train.base_lr << '\n';
    out << "train.momentum = " << train.momentum << '\n';
    out << "train.weight-decay = " << train.weight_decay << '\n';
    out << "train.epochs = " << train.epochs << '\n';
    out << "train.warmup = " << train.warmup_iters << '\n';
    out << "train.batch = " << train.batch_size << '\n';
    out << "train.crop-width = " << train.crop_width << '\n';
    out << "train.flip-prob = " << train.flip_prob << '\n';
    out << "train.upsample = " << train.upsample_h << 'x' << train.upsample_w << '\n';
    out << "seed = " << seed << '\n';
    out << "jobs = " << jobs << '\n';
    out << "data-root = " << data_root << '\n';
    out << "label-map = " << (label_map_path.empty() ? "<builtin>" : label_map_path) << '\n';
    out << "split.train = " << join(split.train) << '\n';
    out << "split.val = " << join(split.val) << '\n';
    out << "split.test = " << join(split.test) << '\n';
    return out.str();
}

}  // namespace kpr
