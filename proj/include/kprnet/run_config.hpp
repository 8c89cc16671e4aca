#ifndef KPRNET_RUN_CONFIG_HPP
#define KPRNET_RUN_CONFIG_HPP

#include <string>

#include "kprnet/kitti_io.hpp"
#include "kprnet/kpconv.hpp"
#include "kprnet/net2d.hpp"
#include "kprnet/postprocess.hpp"
#include "kprnet/projection.hpp"
#include "kprnet/train.hpp"

namespace kpr {

// Flat key=value configuration covering every module, overridable one key
// at a time. Unknown keys are an error; every set is validated before use.
struct RunConfig {
    ProjectionConfig proj;
    Net2DConfig net;
    KPConvConfig kp;
    KnnConfig knn;
    TrainConfig train;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string data_root;  // falls back to $KPRNET_DATA
    SequenceSplit split = SequenceSplit::standard();
    std::string label_map_path;  // empty = built-in SemanticKITTI map

    RunConfig();

    void set(const std::string& key, const std::string& value);
    void load_file(const std::string& path);  // `key = value`, '#' comments
    void validate() const;
    std::string echo() const;  // fully resolved, one key per line

    const LabelMap& label_map() const;
};

}  // namespace kpr

#endif
