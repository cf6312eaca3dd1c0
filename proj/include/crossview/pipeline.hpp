#pragma once

#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "crossview/aae.hpp"
#include "crossview/contrast.hpp"
#include "crossview/datacube.hpp"
#include "crossview/evaluate.hpp"
#include "crossview/vae.hpp"

namespace crossview {

struct SplitBlock {
    SplitStrategy strategy = SplitStrategy::parity;
    bool per_epoch = true;  // random strategy: redraw each training epoch
};

// Full run description. Per-stage seeds derive from `seed` keyed by stage
// name (see derive_seed), so one stage's stream never perturbs another's.
struct RunConfig {
    std::string cube_path, gt_path;
    std::string output_dir = "out";
    std::uint64_t seed = 1234;
    int pca_k = 30;
    bool standardize_bands = false;
    int patch_size = 27;
    double train_fraction = 0.10;
    SplitBlock split;
    BackboneConfig vae_arch, aae_arch;
    VaeTrainConfig vae;
    AaeTrainConfig aae;
    ContrastArchConfig contrast_arch;
    ContrastConfig contrast;
    SvmConfig svm;
    std::string feature_source = "contrast";  // vae | aae | contrast
    std::string contrast_eval_view = "vae";   // which codes feed extract_features
    bool self_reconstruction = false;
};

RunConfig default_run_config();
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Stage-keyed config hashes (hex strings); downstream hashes chain upstream
// ones, so a block change invalidates exactly that stage and everything after.
std::map<std::string, std::string> stage_hashes(const RunConfig& cfg);

class Pipeline {
public:
    explicit Pipeline(RunConfig cfg);

    // Runs every stage, reusing hash-matching artifacts in output_dir.
    MetricsReport run_all();
    // Runs exactly one stage; direct upstream artifacts must already exist.
    void run_stage(const std::string& stage);

    const RunConfig& config() const { return cfg_; }
    const std::map<std::string, std::string>& hashes() const { return hashes_; }
    std::string artifact(const std::string& name) const;

    // Stage accessors (compute, or load a valid cached artifact).
    const HyperCube& reduced_cube();
    const PatchSet& patch_set();
    const GroundTruth& ground_truth();
    const ChannelSplit& canonical_split();
    VaeNet& vae_net();
    AaeNet& aae_net();
    const Tensor& vae_codes();
    const Tensor& aae_codes();
    ContrastNets& contrast_nets();
    const Tensor& features();
    const std::vector<int>& predictions();
    MetricsReport metrics();

private:
    bool artifact_valid(const std::string& stage, const std::string& file) const;
    void stamp(const std::string& stage);
    void require_artifact(const std::string& stage, const std::string& file,
                          const std::string& hint) const;

    RunConfig cfg_;
    std::map<std::string, std::string> hashes_;
    nlohmann::json manifest_;

    std::optional<HyperCube> reduced_;
    std::optional<PcaModel> pca_model_;
    std::optional<GroundTruth> gt_;
    std::optional<PatchSet> patches_;
    std::optional<ChannelSplit> split_;
    std::unique_ptr<VaeNet> vae_;
    std::unique_ptr<AaeNet> aae_;
    std::optional<Tensor> vae_codes_, aae_codes_;
    std::unique_ptr<ContrastNets> contrast_;
    std::optional<Tensor> features_;
    std::optional<std::vector<int>> predictions_;
    std::optional<IndexSplit> eval_split_;
};

std::vector<NamedBlock> net_blocks(VaeNet& net);
std::vector<NamedBlock> net_blocks(AaeNet& net);
std::vector<NamedBlock> net_blocks(ContrastNets& nets);

}  // namespace crossview
