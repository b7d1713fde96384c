#include "csdnet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "csdnet/errors.hpp"

namespace csdnet {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'D', 'T', 'N', 'S', 'R', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("truncated tensor archive: " + path);
    return v;
}

} // namespace

void write_tensor_archive(const std::string& path, const NamedTensors& tensors,
                          bool as_f32) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint8_t>(os, as_f32 ? 'f' : 'd');
        write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i)
            write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(i)));
        if (as_f32) {
            for (long long i = 0; i < t.numel(); ++i)
                write_pod<float>(os, static_cast<float>(t[i]));
        } else {
            os.write(reinterpret_cast<const char*>(t.data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(real)));
        }
    }
    if (!os) throw DataError("write failed: " + path);
}

NamedTensors read_tensor_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open tensor archive: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not a tensor archive: " + path);
    const auto count = read_pod<std::uint32_t>(is, path);
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name_len = read_pod<std::uint32_t>(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("truncated tensor archive: " + path);
        const auto dtype = read_pod<std::uint8_t>(is, path);
        if (dtype != 'f' && dtype != 'd')
            throw FormatError("unknown dtype tag in " + path + " for tensor " + name);
        const auto ndim = read_pod<std::uint8_t>(is, path);
        std::vector<int> shape(ndim);
        long long numel = 1;
        for (int i = 0; i < ndim; ++i) {
            shape[static_cast<size_t>(i)] =
                static_cast<int>(read_pod<std::uint32_t>(is, path));
            numel *= shape[static_cast<size_t>(i)];
        }
        Tensor t(shape);
        if (dtype == 'd') {
            is.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(numel * sizeof(real)));
            if (!is) throw FormatError("truncated tensor archive: " + path);
        } else {
            for (long long i = 0; i < numel; ++i)
                t[i] = static_cast<real>(read_pod<float>(is, path));
        }
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

NamedTensors snapshot(const ParamList& src) {
    NamedTensors out;
    for (const auto& p : src.params()) out.emplace_back(p.name, p.var.value());
    for (const auto& b : src.buffers()) out.emplace_back(b.name, *b.tensor);
    return out;
}

LoadReport apply_tensors(ParamList& dst, const NamedTensors& archive) {
    std::map<std::string, const Tensor*> in_file;
    for (const auto& [name, t] : archive) in_file[name] = &t;
    LoadReport rep;
    std::vector<std::string> mismatched;
    std::set<std::string> used;

    auto apply_one = [&](const std::string& name, Tensor& target) {
        auto it = in_file.find(name);
        if (it == in_file.end()) {
            rep.only_in_model.push_back(name);
            return;
        }
        used.insert(name);
        if (!target.same_shape(*it->second)) {
            mismatched.push_back(name + ": model " + target.shape_str() + " vs file " +
                                 it->second->shape_str());
            return;
        }
        target = *it->second;
        rep.loaded.push_back(name);
    };

    for (auto& p : dst.params()) apply_one(p.name, p.var.value());
    for (auto& b : dst.buffers()) apply_one(b.name, *b.tensor);
    for (const auto& [name, t] : archive)
        if (!used.count(name)) rep.only_in_file.push_back(name);

    if (!mismatched.empty()) {
        std::string msg = "tensor shape mismatch:";
        for (const std::string& m : mismatched) msg += "\n  " + m;
        throw FormatError(msg);
    }
    return rep;
}

void write_checkpoint(const std::string& path, const NamedTensors& tensors,
                      const CheckpointMeta& meta) {
    write_tensor_archive(path, tensors);
    nlohmann::json j;
    j["format_version"] = meta.format_version;
    j["epoch"] = meta.epoch;
    j["adam_step"] = meta.adam_step;
    j["loss_trace"] = meta.loss_trace;
    if (!meta.config_json.empty())
        j["config"] = nlohmann::json::parse(meta.config_json);
    std::ofstream os(path + ".json");
    if (!os) throw DataError("cannot write checkpoint sidecar: " + path + ".json");
    os << j.dump(2) << '\n';
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path + ".json");
    if (!is) throw DataError("missing checkpoint sidecar: " + path + ".json");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint sidecar " + path + ".json: " + e.what());
    }
    CheckpointMeta meta;
    meta.format_version = j.value("format_version", 1);
    meta.epoch = j.value("epoch", 0);
    meta.adam_step = j.value("adam_step", 0LL);
    if (j.contains("loss_trace"))
        meta.loss_trace = j["loss_trace"].get<std::vector<real>>();
    if (j.contains("config")) meta.config_json = j["config"].dump();
    return meta;
}

LoadReport load_backbone_weights(Backbone& backbone, const std::string& path) {
    NamedTensors archive = read_tensor_archive(path);
    ParamList pl;
    backbone.collect("backbone", pl);
    return apply_tensors(pl, archive);
}

void save_backbone_weights(Backbone& backbone, const std::string& path, bool as_f32) {
    ParamList pl;
    backbone.collect("backbone", pl);
    write_tensor_archive(path, snapshot(pl), as_f32);
}

} // namespace csdnet
