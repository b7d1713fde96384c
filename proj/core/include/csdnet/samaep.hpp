#pragma once

#include <map>
#include <string>
#include <vector>

#include "csdnet/data.hpp"
#include "csdnet/losses.hpp"
#include "csdnet/model.hpp"

namespace csdnet {

inline constexpr int kEmbedChannels = 256;
inline constexpr int kEmbedGrid = 64;

/// Fixed guidance tensor of shape [256, 64, 64].
struct SamEmbedding {
    Tensor data;
    std::string source_id;
};

/// File format: 16-byte magic/version header, dims as 3 x uint32 LE
/// (256, 64, 64), then raw little-endian float32 payload.
SamEmbedding load_sam_embedding(const std::string& path);
void save_sam_embedding(const std::string& path, const SamEmbedding& emb);

/// Index file: one "<id> <path>" pair per line.
std::map<std::string, std::string> read_embedding_index(const std::string& path);
void write_embedding_index(const std::string& path,
                           const std::map<std::string, std::string>& index);

/// Deterministic stand-in embedding: a seeded per-channel two-level basis
/// modulated by the downsampled ground truth plus small noise. All values
/// are exactly representable as float32.
SamEmbedding synth_embedding(const Tensor& gt_plane, std::uint64_t seed);

/// 1x1 conv to the embedding channel count plus bilinear resize to the
/// embedding grid. Trainable; used only during pre-training.
struct ProjectionHead {
    Conv2dLayer conv;

    ProjectionHead() = default;
    ProjectionHead(int stage4_channels, Rng& rng);
    Var forward(const Var& f_d4) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

enum class EmbeddingSource { Files, Synthetic };

struct PretrainConfig {
    int epochs = 20;
    real learning_rate = 1e-4;
    int batch_size = 4;
    TransferWeights weights;
    EmbeddingSource source = EmbeddingSource::Synthetic;
    bool thermal_frozen = true;
    std::uint64_t synth_seed = 11;

    void validate() const;
};

struct PretrainResult {
    std::vector<real> epoch_losses;
};

/// Pre-training stage: optimizes the total transfer objective over the depth
/// encoder, the projection head and the attention stacks; the thermal
/// encoder stays frozen (eval mode, parameters untouched) when configured.
class SamaepTrainer {
public:
    SamaepTrainer(CsdNet& model, const PretrainConfig& cfg, std::uint64_t seed);

    /// `embeddings` must parallel `samples`. Throws NumericError naming the
    /// first non-finite loss term.
    PretrainResult run(const std::vector<Sample>& samples,
                       const std::vector<SamEmbedding>& embeddings);

    /// One loss evaluation over a batch (training-mode depth encoder).
    Var batch_loss(const Batch& batch, const Tensor& embedding_stack);

    ProjectionHead& projection() { return proj_; }
    const SamaepLossModule& loss_module() const { return loss_; }

    /// Trainable parameters beyond the depth encoder (projection head and
    /// attention stacks).
    ParamList aux_params();

private:
    CsdNet& model_;
    PretrainConfig cfg_;
    ProjectionHead proj_;
    SamaepLossModule loss_;
};

/// Stacks per-sample embeddings into [N, 256, 64, 64].
Tensor stack_embeddings(const std::vector<SamEmbedding>& embeddings,
                        const std::vector<size_t>& indices);

} // namespace csdnet
