#include "kprnet/kitti_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kprnet/errors.hpp"

namespace fs = std::filesystem;

namespace kpr {

namespace {

float read_f32_le(const std::uint8_t* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

void write_f32_le(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    out.push_back(static_cast<std::uint8_t>(u & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xff));
}

std::uint32_t read_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

PointCloud read_point_cloud(const std::uint8_t* bytes, std::size_t len) {
    if (len % 16 != 0)
        throw FormatError("point cloud byte length " + std::to_string(len) +
                          " is not a multiple of 16");
    std::size_t n = len / 16;
    PointCloud cloud;
    cloud.xyz.resize(3 * n);
    cloud.remission.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = bytes + 16 * i;
        float x = read_f32_le(rec);
        float y = read_f32_le(rec + 4);
        float z = read_f32_le(rec + 8);
        float r = read_f32_le(rec + 12);
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) ||
            !std::isfinite(r))
            throw DataError("non-finite value at point " + std::to_string(i));
        cloud.xyz[3 * i] = x;
        cloud.xyz[3 * i + 1] = y;
        cloud.xyz[3 * i + 2] = z;
        cloud.remission[i] = r;
    }
    return cloud;
}

std::vector<std::uint8_t> write_point_cloud(const PointCloud& cloud) {
    std::vector<std::uint8_t> out;
    out.reserve(cloud.size() * 16);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        write_f32_le(out, static_cast<float>(cloud.x(i)));
        write_f32_le(out, static_cast<float>(cloud.y(i)));
        write_f32_le(out, static_cast<float>(cloud.z(i)));
        write_f32_le(out, static_cast<float>(cloud.remission[i]));
    }
    return out;
}

RawLabels read_labels(const std::uint8_t* bytes, std::size_t len) {
    if (len % 4 != 0)
        throw FormatError("label byte length " + std::to_string(len) +
                          " is not a multiple of 4");
    RawLabels labels;
    std::size_t n = len / 4;
    labels.raw.resize(n);
    for (std::size_t i = 0; i < n; ++i) labels.raw[i] = read_u32_le(bytes + 4 * i);
    return labels;
}

std::vector<std::uint8_t> remap(const RawLabels& labels, const LabelMap& map) {
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        out[i] = map.forward(labels.semantic(i));
    return out;
}

std::vector<std::uint8_t> write_predictions(const std::vector<std::uint8_t>& train_ids,
                                            const LabelMap& map) {
    std::vector<std::uint8_t> out;
    out.reserve(train_ids.size() * 4);
    for (std::size_t i = 0; i < train_ids.size(); ++i) {
        std::uint8_t t = train_ids[i];
        if (t != kIgnoreLabel && t >= kNumClasses)
            throw ArgumentError("train id " + std::to_string(int(t)) +
                                " out of range at index " + std::to_string(i));
        std::uint32_t raw = (t == kIgnoreLabel) ? 0u : map.inverse(t);
        out.push_back(static_cast<std::uint8_t>(raw & 0xff));
        out.push_back(static_cast<std::uint8_t>((raw >> 8) & 0xff));
        out.push_back(0);
        out.push_back(0);
    }
    return out;
}

LabelMap LabelMap::parse(const std::string& text) {
    LabelMap map;
    bool seen[kNumClasses] = {};
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        long raw_id;
        std::string train_tok, name;
        if (!(ls >> raw_id)) continue;  // blank
        if (!(ls >> train_tok >> name))
            throw FormatError("label map line " + std::to_string(line_no) +
                              ": expected `raw_id train_id name`");
        if (raw_id < 0 || raw_id > 0xffff)
            throw FormatError("label map line " + std::to_string(line_no) +
                              ": raw id out of range");
        int train_id;
        if (train_tok == "ignore")
            train_id = kIgnoreLabel;
        else
            train_id = std::stoi(train_tok);
        if (train_id != kIgnoreLabel && (train_id < 0 || train_id >= kNumClasses))
            throw FormatError("label map line " + std::to_string(line_no) +
                              ": train id out of range");
        auto raw = static_cast<std::uint16_t>(raw_id);
        map.forward_[raw] = static_cast<std::uint8_t>(train_id);
        if (train_id != kIgnoreLabel && !seen[train_id]) {
            // first raw id listed for a train id is its canonical inverse
            seen[train_id] = true;
            map.inverse_[train_id] = raw;
            map.names_[train_id] = name;
        }
    }
    map.validate();
    return map;
}

LabelMap LabelMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label map: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

void LabelMap::validate() const {
    for (int c = 0; c < kNumClasses; ++c) {
        if (names_[c].empty())
            throw FormatError("label map: train id " + std::to_string(c) +
                              " has no class; need 19 contiguous ids");
        auto it = forward_.find(inverse_[c]);
        if (it == forward_.end() || it->second != c)
            throw FormatError("label map: inverse of train id " + std::to_string(c) +
                              " does not map back");
    }
}

std::uint8_t LabelMap::forward(std::uint16_t raw_semantic) const {
    auto it = forward_.find(raw_semantic);
    return it == forward_.end() ? kIgnoreLabel : it->second;
}

std::uint16_t LabelMap::inverse(std::uint8_t train_id) const {
    if (train_id == kIgnoreLabel) return 0;
    if (train_id >= kNumClasses)
        throw ArgumentError("train id out of range: " + std::to_string(int(train_id)));
    return inverse_[train_id];
}

const std::string& LabelMap::name(std::uint8_t train_id) const {
    if (train_id >= kNumClasses)
        throw ArgumentError("train id out of range: " + std::to_string(int(train_id)));
    return names_[train_id];
}

std::string LabelMap::to_text() const {
    std::ostringstream out;
    for (const auto& [raw, train] : forward_) {
        out << raw << ' ';
        if (train == kIgnoreLabel)
            out << "ignore unlabeled";
        else
            out << int(train) << ' ' << names_[train];
        out << '\n';
    }
    return out.str();
}

const LabelMap& LabelMap::semantic_kitti() {
    static const LabelMap map = parse(R"(
# SemanticKITTI 19-class reduction
0   ignore unlabeled
1   ignore outlier
10  0  car
11  1  bicycle
15  2  motorcycle
18  3  truck
20  4  other-vehicle
13  4  other-vehicle   # bus folded into other-vehicle
16  4  other-vehicle   # on-rails
30  5  person
31  6  bicyclist
32  7  motorcyclist
40  8  road
44  9  parking
48  10 sidewalk
49  11 other-ground
50  12 building
51  13 fence
52  ignore other-structure
60  8  road            # lane-marking
70  14 vegetation
71  15 trunk
72  16 terrain
80  17 pole
81  18 traffic-sign
99  ignore other-object
252 0  car             # moving-car
253 6  bicyclist       # moving-bicyclist
254 5  person          # moving-person
255 7  motorcyclist    # moving-motorcyclist
256 4  other-vehicle   # moving-on-rails
257 4  other-vehicle   # moving-bus
258 3  truck           # moving-truck
259 4  other-vehicle   # moving-other-vehicle
)");
    return map;
}

SequenceSplit SequenceSplit::standard() {
    SequenceSplit split;
    for (int s = 0; s <= 10; ++s)
        if (s != 8) split.train.insert(s);
    split.val = {8};
    for (int s = 11; s <= 21; ++s) split.test.insert(s);
    split.check_disjoint();
    return split;
}

void SequenceSplit::check_disjoint() const {
    auto overlap = [](const std::set<int>& a, const std::set<int>& b) {
        return std::any_of(a.begin(), a.end(),
                           [&](int s) { return b.count(s) > 0; });
    };
    if (overlap(train, val) || overlap(train, test) || overlap(val, test))
        throw ArgumentError("sequence split sets are not disjoint");
}

PointCloud load_point_cloud(const std::string& path) {
    auto bytes = read_file(path);
    try {
        return read_point_cloud(bytes.data(), bytes.size());
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

RawLabels load_labels(const std::string& path) {
    auto bytes = read_file(path);
    try {
        return read_labels(bytes.data(), bytes.size());
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_predictions(const std::string& path, const std::vector<std::uint8_t>& train_ids,
                      const LabelMap& map) {
    auto bytes = write_predictions(train_ids, map);
    write_file(path, bytes.data(), bytes.size());
}

std::vector<std::string> discover_scans(const std::string& root, int sequence) {
    char seq[8];
    std::snprintf(seq, sizeof(seq), "%02d", sequence);
    fs::path dir = fs::path(root) / "sequences" / seq / "velodyne";
    std::vector<std::string> scans;
    if (!fs::is_directory(dir)) return scans;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".bin")
            scans.push_back(entry.path().string());
    std::sort(scans.begin(), scans.end());
    return scans;
}

std::string label_path_for_scan(const std::string& scan_path) {
    fs::path p(scan_path);
    return (p.parent_path().parent_path() / "labels" / p.stem()).string() + ".label";
}

void write_file(const std::string& path, const std::uint8_t* bytes, std::size_t len) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(len));
    if (!out) throw IoError("write failed: " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open: " + path);
    auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IoError("read failed: " + path);
    return bytes;
}

}  // namespace kpr
