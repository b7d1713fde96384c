#pragma once

#include <string>
#include <vector>

#include "csdnet/model.hpp"
#include "csdnet/samaep.hpp"
#include "csdnet/train.hpp"

namespace csdnet {

struct DataConfig {
    enum class Source { Directory, Synthetic };
    Source source = Source::Synthetic;
    std::string root;
    int synthetic_count = 8;
    std::uint64_t synthetic_seed = 7;
    real train_fraction = 0.8;
    bool invert_depth = true;
};

/// Everything one command run needs; JSON file plus flag overrides.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "runs";
    std::string run_name; // empty: timestamped directory name
    CsdNetConfig model;
    bool samaep_enabled = true;
    PretrainConfig pretrain;
    std::string embedding_index; // required when pretrain.source == Files
    TrainConfig train;
    DataConfig data;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

/// Every validation problem at once (empty when the config is usable).
std::vector<std::string> validate_run_config(const RunConfig& cfg);

} // namespace csdnet
