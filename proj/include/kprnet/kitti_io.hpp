#ifndef KPRNET_KITTI_IO_HPP
#define KPRNET_KITTI_IO_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace kpr {

constexpr std::uint8_t kIgnoreLabel = 255;
constexpr int kNumClasses = 19;

// Capture-ordered LiDAR sweep: index order equals file order.
struct PointCloud {
    std::vector<double> xyz;        // packed x,y,z per point
    std::vector<double> remission;  // one per point

    std::size_t size() const { return remission.size(); }
    double x(std::size_t i) const { return xyz[3 * i]; }
    double y(std::size_t i) const { return xyz[3 * i + 1]; }
    double z(std::size_t i) const { return xyz[3 * i + 2]; }
};

// Raw SemanticKITTI labels: low 16 bits semantic, high 16 bits instance.
struct RawLabels {
    std::vector<std::uint32_t> raw;

    std::size_t size() const { return raw.size(); }
    std::uint16_t semantic(std::size_t i) const {
        return static_cast<std::uint16_t>(raw[i] & 0xffffu);
    }
    std::uint16_t instance(std::size_t i) const {
        return static_cast<std::uint16_t>(raw[i] >> 16);
    }
};

// raw-semantic-id <-> train-id {0..18} mapping plus class names.
class LabelMap {
  public:
    // Parses the plain text format: `raw_id train_id name` per line,
    // '#' comments and blank lines allowed. A raw id may map to the
    // ignore sentinel by giving train_id 255 or the word "ignore".
    static LabelMap parse(const std::string& text);
    static LabelMap load(const std::string& path);

    // The published 19-class SemanticKITTI reduction (moving classes
    // folded into their static counterparts).
    static const LabelMap& semantic_kitti();

    std::uint8_t forward(std::uint16_t raw_semantic) const;  // unknown -> ignore
    std::uint16_t inverse(std::uint8_t train_id) const;      // ignore -> 0
    const std::string& name(std::uint8_t train_id) const;

    std::string to_text() const;

  private:
    void validate() const;

    std::map<std::uint16_t, std::uint8_t> forward_;
    std::uint16_t inverse_[kNumClasses] = {};
    std::string names_[kNumClasses];
};

struct SequenceSplit {
    std::set<int> train;
    std::set<int> val;
    std::set<int> test;

    // train {0..7,9,10}, val {8}, test {11..21}
    static SequenceSplit standard();

    // Throws ArgumentError if the three sets overlap.
    void check_disjoint() const;
};

// .bin decoding: 16 bytes per point, four LE float32 (x,y,z,remission).
PointCloud read_point_cloud(const std::uint8_t* bytes, std::size_t len);
std::vector<std::uint8_t> write_point_cloud(const PointCloud& cloud);
PointCloud load_point_cloud(const std::string& path);

// .label decoding: LE uint32 per point.
RawLabels read_labels(const std::uint8_t* bytes, std::size_t len);
RawLabels load_labels(const std::string& path);

std::vector<std::uint8_t> remap(const RawLabels& labels, const LabelMap& map);

// Serializes train ids as raw .label bytes via the inverse map; instance
// bits are zero, ignore becomes raw id 0.
std::vector<std::uint8_t> write_predictions(const std::vector<std::uint8_t>& train_ids,
                                            const LabelMap& map);
void save_predictions(const std::string& path, const std::vector<std::uint8_t>& train_ids,
                      const LabelMap& map);

// `<root>/sequences/<NN>/velodyne/*.bin`, sorted. Scan stems pair with
// `.../labels/<stem>.label`.
std::vector<std::string> discover_scans(const std::string& root, int sequence);
std::string label_path_for_scan(const std::string& scan_path);

void write_file(const std::string& path, const std::uint8_t* bytes, std::size_t len);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace kpr

#endif
