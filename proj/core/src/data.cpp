#include "csdnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "csdnet/errors.hpp"
#include "csdnet/image_io.hpp"

namespace fs = std::filesystem;

namespace csdnet {

Sample load_vdt_sample(const std::string& root, const std::string& id,
                       const LoaderConfig& cfg) {
    Sample s;
    s.id = id;
    const std::string paths[3] = {
        root + "/" + cfg.depth_dir + "/" + id + ".png",
        root + "/" + cfg.thermal_dir + "/" + id + ".png",
        root + "/" + cfg.gt_dir + "/" + id + ".png",
    };
    for (const std::string& p : paths)
        if (!fs::exists(p)) throw DataError("missing dataset file: " + p);

    Tensor d = resize_bilinear_plane(read_png_gray(paths[0]), cfg.input_h, cfg.input_w);
    Tensor t = resize_bilinear_plane(read_png_gray(paths[1]), cfg.input_h, cfg.input_w);
    Tensor g = resize_nearest_plane(read_png_gray(paths[2]), cfg.input_h, cfg.input_w);
    if (cfg.invert_depth)
        for (long long i = 0; i < d.numel(); ++i) d[i] = 1.0 - d[i];
    for (long long i = 0; i < g.numel(); ++i) g[i] = g[i] >= 0.5 ? 1.0 : 0.0;
    s.depth = std::move(d);
    s.thermal = std::move(t);
    s.gt = std::move(g);
    return s;
}

std::vector<std::string> list_vdt_ids(const std::string& root, const LoaderConfig& cfg) {
    auto stems = [](const std::string& dir) {
        std::set<std::string> out;
        if (!fs::is_directory(dir)) throw DataError("missing dataset directory: " + dir);
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".png") out.insert(e.path().stem().string());
        return out;
    };
    const std::set<std::string> d = stems(root + "/" + cfg.depth_dir);
    const std::set<std::string> t = stems(root + "/" + cfg.thermal_dir);
    const std::set<std::string> g = stems(root + "/" + cfg.gt_dir);
    std::vector<std::string> ids;
    for (const std::string& id : d)
        if (t.count(id) && g.count(id)) ids.push_back(id);
    return ids;
}

void SceneSpec::validate() const {
    if (h <= 0 || w <= 0) throw ConfigError("scene: canvas must be positive");
    bool any = false;
    for (const ObjectSpec& o : objects)
        if (std::max(o.depth_visibility, o.thermal_visibility) > 0) any = true;
    if (!any) throw ConfigError("scene: needs at least one visible object");
}

namespace {

bool inside(const ObjectSpec& o, int y, int x) {
    const real dy = y - o.cy, dx = x - o.cx;
    if (o.shape == ObjectSpec::Shape::Circle)
        return dy * dy + dx * dx <= o.radius * o.radius;
    return std::fabs(dy) <= o.radius && std::fabs(dx) <= o.radius;
}

// 5x5 box blur with shrink-to-edge averaging.
Tensor box_blur5(const Tensor& src) {
    const int H = src.dim(0), W = src.dim(1);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            real s = 0;
            int n = 0;
            for (int dy = -2; dy <= 2; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= H) continue;
                for (int dx = -2; dx <= 2; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= W) continue;
                    s += src.at(yy, xx);
                    ++n;
                }
            }
            out.at(y, x) = s / n;
        }
    return out;
}

} // namespace

Sample synth_sample(const SceneSpec& spec) {
    spec.validate();
    const int H = spec.h, W = spec.w;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<real> uni(0.0, 1.0);
    std::normal_distribution<real> gauss(0.0, 1.0);

    // Smooth gradient background for depth.
    const real angle = uni(rng) * 2.0 * 3.14159265358979323846;
    const real gx = std::cos(angle), gy = std::sin(angle);
    Tensor depth({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const real t = (gx * x / std::max(1, W - 1) + gy * y / std::max(1, H - 1) + 1.0) / 2.0;
            depth.at(y, x) = 0.2 + 0.25 * t;
        }

    // Cluttered background for thermal: smoothed noise.
    Tensor clutter({H, W});
    for (long long i = 0; i < clutter.numel(); ++i) clutter[i] = gauss(rng);
    clutter = box_blur5(clutter);
    Tensor thermal({H, W});
    for (long long i = 0; i < thermal.numel(); ++i)
        thermal[i] = 0.3 + spec.thermal_clutter * clutter[i];

    Tensor gt({H, W});
    constexpr real kContrast = 0.5;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (const ObjectSpec& o : spec.objects)
                if (inside(o, y, x)) {
                    gt.at(y, x) = 1.0;
                    depth.at(y, x) += kContrast * o.depth_visibility;
                    thermal.at(y, x) += kContrast * o.thermal_visibility;
                }

    // Per-pixel sensor noise below the detection contrast.
    for (long long i = 0; i < depth.numel(); ++i) {
        depth[i] = std::clamp(depth[i] + spec.depth_clutter * gauss(rng), real(0), real(1));
        thermal[i] = std::clamp(thermal[i] + 0.02 * gauss(rng), real(0), real(1));
    }

    Sample s;
    s.id = "syn,seed=" + std::to_string(spec.seed);
    s.depth = std::move(depth);
    s.thermal = std::move(thermal);
    s.gt = std::move(gt);
    return s;
}

SceneSpec low_coherence_scene(std::uint64_t seed, int h, int w) {
    SceneSpec spec;
    spec.seed = seed;
    spec.h = h;
    spec.w = w;
    std::mt19937_64 rng(seed * 2654435761ULL + 17);
    std::uniform_real_distribution<real> uni(0.0, 1.0);
    const real vis[3][2] = {{1.0, 0.0}, {0.0, 1.0}, {0.9, 0.9}};
    const real margin = 0.22;
    for (int k = 0; k < 3; ++k) {
        ObjectSpec o;
        o.shape = uni(rng) < 0.5 ? ObjectSpec::Shape::Circle : ObjectSpec::Shape::Rect;
        // Three well-separated anchor cells so single-modality coverage stays partial.
        const int cell = k; // 0: left, 1: right, 2: center-bottom
        const real jy = uni(rng) * 0.12, jx = uni(rng) * 0.12;
        if (cell == 0) {
            o.cy = h * (0.3 + jy);
            o.cx = w * (margin + jx);
        } else if (cell == 1) {
            o.cy = h * (0.3 + jy);
            o.cx = w * (1.0 - margin - jx);
        } else {
            o.cy = h * (0.72 + jy * 0.5);
            o.cx = w * (0.5 + (jx - 0.06));
        }
        o.radius = std::min(h, w) * (0.09 + 0.05 * uni(rng));
        o.depth_visibility = vis[k][0];
        o.thermal_visibility = vis[k][1];
        spec.objects.push_back(o);
    }
    return spec;
}

std::pair<std::vector<std::string>, std::vector<std::string>>
make_split(const std::vector<std::string>& ids, real train_fraction, std::uint64_t seed) {
    if (ids.empty()) throw DataError("make_split: empty id list");
    std::vector<std::string> shuffled = ids;
    std::mt19937_64 rng(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto n_train = static_cast<size_t>(
        std::llround(train_fraction * static_cast<real>(shuffled.size())));
    std::vector<std::string> train(shuffled.begin(),
                                   shuffled.begin() + std::min(n_train, shuffled.size()));
    std::vector<std::string> test(shuffled.begin() + std::min(n_train, shuffled.size()),
                                  shuffled.end());
    return {std::move(train), std::move(test)};
}

std::vector<size_t> epoch_order(size_t n, std::uint64_t seed, int epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices) {
    if (indices.empty()) throw DataError("make_batch: empty index list");
    const int H = samples[indices[0]].height(), W = samples[indices[0]].width();
    const int N = static_cast<int>(indices.size());
    Batch b{Tensor({N, 1, H, W}), Tensor({N, 1, H, W}), Tensor({N, 1, H, W})};
    const long long hw = static_cast<long long>(H) * W;
    for (int n = 0; n < N; ++n) {
        const Sample& s = samples[indices[static_cast<size_t>(n)]];
        Tensor::check_same_shape(s.depth, samples[indices[0]].depth, "make_batch");
        std::copy_n(s.depth.data(), hw, b.depth.data() + n * hw);
        std::copy_n(s.thermal.data(), hw, b.thermal.data() + n * hw);
        std::copy_n(s.gt.data(), hw, b.gt.data() + n * hw);
    }
    return b;
}

} // namespace csdnet
