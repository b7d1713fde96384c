#include "csdnet/samaep.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "csdnet/errors.hpp"

namespace csdnet {

namespace {

constexpr char kEmbMagic[16] = {'C', 'S', 'D', 'N', 'E', 'T', '-', 'E',
                                'M', 'B', '-', 'v', '0', '0', '1', '\0'};

} // namespace

SamEmbedding load_sam_embedding(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open embedding file: " + path);
    char magic[16];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kEmbMagic, sizeof(kEmbMagic)) != 0)
        throw FormatError("not an embedding file: " + path);
    std::uint32_t dims[3];
    is.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!is) throw FormatError("truncated embedding file: " + path);
    if (dims[0] != kEmbedChannels || dims[1] != kEmbedGrid || dims[2] != kEmbedGrid) {
        std::ostringstream os;
        os << "embedding shape mismatch in " << path << ": expected [" << kEmbedChannels
           << "," << kEmbedGrid << "," << kEmbedGrid << "], found [" << dims[0] << ","
           << dims[1] << "," << dims[2] << "]";
        throw FormatError(os.str());
    }
    const long long numel =
        static_cast<long long>(dims[0]) * dims[1] * dims[2];
    std::vector<float> buf(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw FormatError("truncated embedding payload: " + path);
    SamEmbedding emb;
    emb.source_id = path;
    emb.data = Tensor({kEmbedChannels, kEmbedGrid, kEmbedGrid});
    for (long long i = 0; i < numel; ++i)
        emb.data[i] = static_cast<real>(buf[static_cast<size_t>(i)]);
    if (!emb.data.all_finite())
        throw FormatError("embedding contains non-finite values: " + path);
    return emb;
}

void save_sam_embedding(const std::string& path, const SamEmbedding& emb) {
    if (emb.data.ndim() != 3 || emb.data.dim(0) != kEmbedChannels ||
        emb.data.dim(1) != kEmbedGrid || emb.data.dim(2) != kEmbedGrid)
        throw ShapeError("save_sam_embedding: tensor must be [256,64,64], got " +
                         emb.data.shape_str());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write embedding file: " + path);
    os.write(kEmbMagic, sizeof(kEmbMagic));
    const std::uint32_t dims[3] = {kEmbedChannels, kEmbedGrid, kEmbedGrid};
    os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (long long i = 0; i < emb.data.numel(); ++i) {
        const float f = static_cast<float>(emb.data[i]);
        os.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
    if (!os) throw DataError("embedding write failed: " + path);
}

std::map<std::string, std::string> read_embedding_index(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open embedding index: " + path);
    std::map<std::string, std::string> index;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string id, p;
        if (!(ls >> id >> p))
            throw FormatError("bad embedding index line in " + path + ": " + line);
        index[id] = p;
    }
    return index;
}

void write_embedding_index(const std::string& path,
                           const std::map<std::string, std::string>& index) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write embedding index: " + path);
    for (const auto& [id, p] : index) os << id << ' ' << p << '\n';
}

SamEmbedding synth_embedding(const Tensor& gt_plane, std::uint64_t seed) {
    Tensor g64 = resize_bilinear_plane(gt_plane, kEmbedGrid, kEmbedGrid);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    SamEmbedding emb;
    emb.source_id = "synth,seed=" + std::to_string(seed);
    emb.data = Tensor({kEmbedChannels, kEmbedGrid, kEmbedGrid});
    long long idx = 0;
    for (int c = 0; c < kEmbedChannels; ++c) {
        const float fg = uni(rng), bg = uni(rng);
        for (int i = 0; i < kEmbedGrid * kEmbedGrid; ++i, ++idx) {
            // Computed in float32 so the on-disk payload round-trips exactly.
            const float m = static_cast<float>(g64[i]);
            const float v = bg + (fg - bg) * m + 0.05f * gauss(rng);
            emb.data[idx] = static_cast<real>(v);
        }
    }
    return emb;
}

ProjectionHead::ProjectionHead(int stage4_channels, Rng& rng)
    : conv(stage4_channels, kEmbedChannels, 1, 1, 0, 1, true, rng) {}

Var ProjectionHead::forward(const Var& f_d4) const {
    return bilinear_resize(conv.forward(f_d4), kEmbedGrid, kEmbedGrid);
}

void ProjectionHead::collect(const std::string& prefix, ParamList& out) const {
    conv.collect(prefix + ".conv", out);
}

void PretrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("pretrain: epochs must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("pretrain: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
    weights.validate();
}

Tensor stack_embeddings(const std::vector<SamEmbedding>& embeddings,
                        const std::vector<size_t>& indices) {
    Tensor out({static_cast<int>(indices.size()), kEmbedChannels, kEmbedGrid, kEmbedGrid});
    const long long per = static_cast<long long>(kEmbedChannels) * kEmbedGrid * kEmbedGrid;
    for (size_t n = 0; n < indices.size(); ++n) {
        const Tensor& src = embeddings[indices[n]].data;
        std::copy_n(src.data(), per, out.data() + static_cast<long long>(n) * per);
    }
    return out;
}

SamaepTrainer::SamaepTrainer(CsdNet& model, const PretrainConfig& cfg, std::uint64_t seed)
    : model_(model), cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed ^ 0xabcdef12345ULL);
    proj_ = ProjectionHead(model_.config().encoder.stage_channels[3], rng);
    loss_ = SamaepLossModule(model_.config().encoder.stage_channels, kEmbedChannels,
                             model_.config().se_reduction, 4, rng);
}

ParamList SamaepTrainer::aux_params() {
    ParamList out;
    proj_.collect("samaep.projection", out);
    loss_.collect("samaep.loss", out);
    return out;
}

Var SamaepTrainer::batch_loss(const Batch& batch, const Tensor& embedding_stack) {
    FeaturePyramid pyr_d = model_.depth_encoder().forward(constant(batch.depth));
    FeaturePyramid pyr_t = model_.thermal_encoder().forward(constant(batch.thermal));
    Var proj = proj_.forward(pyr_d.stage(4));
    Var s_d = constant(embedding_stack);
    SamaepLossModule::Terms terms =
        loss_.terms(pyr_d, pyr_t, proj, s_d, cfg_.weights);
    const std::pair<const char*, const Var*> named[] = {
        {"SAL", &terms.sal},       {"STL(d->t)", &terms.stl_dt},
        {"STL(t->d)", &terms.stl_td}, {"GTL(d->t)", &terms.gtl_dt},
        {"GTL(t->d)", &terms.gtl_td},
    };
    for (const auto& [name, term] : named)
        if (!std::isfinite(term->item()))
            throw NumericError(std::string("samaep: non-finite loss term ") + name);
    return terms.total;
}

PretrainResult SamaepTrainer::run(const std::vector<Sample>& samples,
                                  const std::vector<SamEmbedding>& embeddings) {
    if (samples.empty()) throw DataError("pretrain: empty sample set");
    if (samples.size() != embeddings.size())
        throw DataError("pretrain: need one embedding per sample");

    model_.depth_encoder().set_training(true);
    // Frozen thermal reference runs with inference statistics so its
    // state is bit-identical before and after.
    model_.thermal_encoder().set_training(!cfg_.thermal_frozen);

    std::vector<Var> opt_params;
    ParamList dl;
    model_.depth_encoder().collect("depth_encoder", dl);
    for (const auto& p : dl.params()) opt_params.push_back(p.var);
    if (!cfg_.thermal_frozen) {
        ParamList tl;
        model_.thermal_encoder().collect("thermal_encoder", tl);
        for (const auto& p : tl.params()) opt_params.push_back(p.var);
    }
    ParamList aux = aux_params();
    for (const auto& p : aux.params()) opt_params.push_back(p.var);
    AdamOptimizer opt(opt_params, cfg_.learning_rate);

    PretrainResult result;
    const size_t n = samples.size();
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        const std::vector<size_t> order = epoch_order(n, cfg_.synth_seed, epoch);
        real epoch_loss = 0;
        int steps = 0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg_.batch_size)) {
            std::vector<size_t> idx(order.begin() + static_cast<long>(start),
                                    order.begin() +
                                        static_cast<long>(std::min(
                                            n, start + static_cast<size_t>(cfg_.batch_size))));
            Batch batch = make_batch(samples, idx);
            Tensor emb = stack_embeddings(embeddings, idx);
            opt.zero_grad();
            Var loss = batch_loss(batch, emb);
            backward(loss);
            opt.step();
            epoch_loss += loss.item();
            ++steps;
        }
        result.epoch_losses.push_back(epoch_loss / std::max(1, steps));
    }
    return result;
}

} // namespace csdnet
