#pragma once

// TFM1 checkpoint container and CSV dumps.
//
// Checkpoint layout (all integers little-endian):
//   "TFM1"
//   u64 array count
//   per array: u32 name length, name bytes, u8 dtype (1 = f64), u32 rank, u64 dims[rank]
//   array payloads in manifest order, row-major f64
//   u32 record length, JSON model-config record

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tfm/config.hpp"
#include "tfm/sampling.hpp"

namespace tfm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'T', 'F', 'M', '1'};
inline constexpr std::uint8_t kDtypeF64 = 1;
inline constexpr int kCheckpointFormat = 1;
inline const std::string kEmaPrefix = "ema/";

#ifndef TFM_VERSION
#define TFM_VERSION "0.0.0"
#endif

/// Version string written into checkpoints and manifests.
inline const std::string kVersion = TFM_VERSION;

struct Checkpoint {
    ModelConfig model;
    ParamSet params;
    /// Moving-average weights, when training kept them.
    std::optional<ParamSet> ema;
    /// Full experiment config the checkpoint came from (null when absent).
    Json experiment = nullptr;
    std::size_t step = 0;

    /// Weights used for sampling: EMA when present.
    const ParamSet& sampling_params() const { return ema ? *ema : params; }

    bool operator==(const Checkpoint&) const = default;
};

namespace io_detail {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <class T>
    void pod(T v) {
        bytes(&v, sizeof v);
    }
    const std::string& str() const noexcept { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    void bytes(void* p, std::size_t n) {
        if (n > data_.size() - pos_) {
            throw IoError("checkpoint truncated: needed " + std::to_string(n) + " bytes", pos_);
        }
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    template <class T>
    T pod() {
        T v{};
        bytes(&v, sizeof v);
        return v;
    }
    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open '" + path + "'");
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("write to '" + path + "' failed");
    }
}

} // namespace io_detail

inline std::string checkpoint_bytes(const Checkpoint& ck) {
    std::vector<std::pair<std::string, const Tensor*>> arrays;
    for (const auto& [name, t] : ck.params) {
        arrays.emplace_back(name, &t);
    }
    if (ck.ema) {
        for (const auto& [name, t] : *ck.ema) {
            arrays.emplace_back(kEmaPrefix + name, &t);
        }
    }
    io_detail::Writer w;
    w.bytes(kCheckpointMagic, 4);
    w.pod<std::uint64_t>(arrays.size());
    for (const auto& [name, t] : arrays) {
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.pod<std::uint8_t>(kDtypeF64);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d : t->shape()) {
            w.pod<std::uint64_t>(d);
        }
    }
    for (const auto& [_, t] : arrays) {
        w.bytes(t->storage().data(), t->size() * sizeof(double));
    }
    const Json record{{"format", kCheckpointFormat},
                      {"version", kVersion},
                      {"model", model_to_json(ck.model)},
                      {"experiment", ck.experiment},
                      {"step", ck.step}};
    const std::string text = record.dump();
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());
    return w.str();
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    io_detail::write_file(path, checkpoint_bytes(ck));
}

inline Checkpoint parse_checkpoint(std::string bytes) {
    io_detail::Reader r(std::move(bytes));
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw IoError("not a TFM1 checkpoint (bad magic)", 0);
    }
    const auto count = r.pod<std::uint64_t>();
    if (count > r.remaining()) {
        throw IoError("implausible array count " + std::to_string(count), 4);
    }
    struct Entry {
        std::string name;
        Shape shape;
    };
    std::vector<Entry> manifest;
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::size_t at = r.pos();
        const auto len = r.pod<std::uint32_t>();
        if (len > r.remaining()) {
            throw IoError("array name runs past end of file", at);
        }
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        const std::size_t dtype_at = r.pos();
        if (r.pod<std::uint8_t>() != kDtypeF64) {
            throw IoError("unsupported dtype for array '" + name + "'", dtype_at);
        }
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 8) {
            throw IoError("implausible rank for array '" + name + "'", dtype_at + 1);
        }
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.pod<std::uint64_t>();
        }
        manifest.push_back({std::move(name), std::move(shape)});
    }
    Checkpoint ck;
    ParamSet ema;
    for (const auto& e : manifest) {
        const std::size_t at = r.pos();
        std::size_t n = 1;
        for (std::size_t d : e.shape) {
            if (d != 0 && n > r.remaining() / d) {
                throw IoError("array '" + e.name + "' is larger than the file", at);
            }
            n *= d;
        }
        if (n * sizeof(double) > r.remaining()) {
            throw IoError("array '" + e.name + "' payload truncated", at);
        }
        std::vector<double> data(n);
        r.bytes(data.data(), n * sizeof(double));
        Tensor t(e.shape, std::move(data));
        try {
            if (e.name.rfind(kEmaPrefix, 0) == 0) {
                ema.add(e.name.substr(kEmaPrefix.size()), std::move(t));
            } else {
                ck.params.add(e.name, std::move(t));
            }
        } catch (const ContractError&) {
            throw IoError("duplicate array '" + e.name + "'", at);
        }
    }
    const std::size_t record_at = r.pos();
    const auto len = r.pod<std::uint32_t>();
    if (len > r.remaining()) {
        throw IoError("config record truncated", record_at);
    }
    std::string text(len, '\0');
    r.bytes(text.data(), len);
    if (r.remaining() != 0) {
        throw IoError("trailing bytes after config record", r.pos());
    }
    Json record;
    try {
        record = Json::parse(text);
        if (record.at("format").get<int>() != kCheckpointFormat) {
            throw IoError("unsupported checkpoint format version", record_at);
        }
        const auto version = record.at("version").get<std::string>();
        if (version != kVersion) {
            throw IoError("checkpoint written by version " + version + ", this is " + kVersion, record_at);
        }
        ck.model = model_from_json(record.at("model"));
        ck.experiment = record.at("experiment");
        ck.step = record.at("step").get<std::size_t>();
    } catch (const Json::exception& e) {
        throw IoError(std::string("bad config record: ") + e.what(), record_at);
    } catch (const ValidationError& e) {
        throw IoError(std::string("bad config record: ") + e.what(), record_at);
    }
    // Arrays must match the declared architecture exactly.
    Rng probe(0);
    const ParamSet expect = init_params(ck.model, probe);
    auto same_layout = [&](const ParamSet& p) {
        if (p.size() != expect.size()) {
            return false;
        }
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (p.entry(k).first != expect.entry(k).first ||
                p.entry(k).second.shape() != expect.entry(k).second.shape()) {
                return false;
            }
        }
        return true;
    };
    if (!same_layout(ck.params)) {
        throw IoError("checkpoint arrays do not match the model config", record_at);
    }
    if (ema.size() > 0) {
        if (!same_layout(ema)) {
            throw IoError("checkpoint EMA arrays do not match the model config", record_at);
        }
        ck.ema = std::move(ema);
    }
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(io_detail::read_file(path)); }

inline TfmModel tfm_model_of(const Checkpoint& ck) {
    if (ck.model.kind != ModelKind::TFM) {
        throw ValidationError("ckpt", "checkpoint holds a velocity (FM) model, not a transition model");
    }
    return {ck.model, ck.sampling_params()};
}

inline FmModel fm_model_of(const Checkpoint& ck) {
    if (ck.model.kind != ModelKind::FM) {
        throw ValidationError("ckpt", "checkpoint holds a transition (TFM) model, not a velocity model");
    }
    return {ck.model, ck.sampling_params()};
}

namespace io_detail {

inline void append_number(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

} // namespace io_detail

/// Columns x1..xd, plus `label` when labels are given.
inline std::string samples_csv(const Tensor& pts, const ClassIds& labels = {}) {
    if (pts.rank() != 2) {
        throw ShapeError("samples must be [n x d]");
    }
    if (!labels.empty() && labels.size() != pts.rows()) {
        throw ShapeError("label count does not match sample count");
    }
    std::string out;
    for (std::size_t c = 0; c < pts.cols(); ++c) {
        out += (c ? ",x" : "x") + std::to_string(c + 1);
    }
    if (!labels.empty()) {
        out += ",label";
    }
    out += '\n';
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        for (std::size_t c = 0; c < pts.cols(); ++c) {
            if (c) {
                out += ',';
            }
            io_detail::append_number(out, pts(i, c));
        }
        if (!labels.empty()) {
            out += ',' + std::to_string(labels[i]);
        }
        out += '\n';
    }
    return out;
}

inline void write_samples_csv(const std::string& path, const Tensor& pts, const ClassIds& labels = {}) {
    io_detail::write_file(path, samples_csv(pts, labels));
}

inline TargetSet read_samples_csv(const std::string& path) {
    std::istringstream in(io_detail::read_file(path));
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError("empty CSV '" + path + "'");
    }
    std::size_t dims = 0;
    bool labeled = false;
    {
        std::stringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ',')) {
            if (col == "label") {
                labeled = true;
            } else if (col == "x" + std::to_string(dims + 1) && !labeled) {
                ++dims;
            } else {
                throw IoError("unexpected CSV column '" + col + "' in '" + path + "'");
            }
        }
    }
    if (dims == 0) {
        throw IoError("CSV '" + path + "' has no coordinate columns");
    }
    std::vector<double> values;
    ClassIds labels;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::stringstream ls(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ls, cell, ',')) {
            try {
                if (col < dims) {
                    values.push_back(std::stod(cell));
                } else if (labeled && col == dims) {
                    labels.push_back(std::stoi(cell));
                }
            } catch (const std::exception&) {
                throw IoError("bad number '" + cell + "' on line " + std::to_string(line_no) + " of '" + path + "'");
            }
            ++col;
        }
        if (col != dims + (labeled ? 1 : 0)) {
            throw IoError("wrong column count on line " + std::to_string(line_no) + " of '" + path + "'");
        }
        ++rows;
    }
    if (rows == 0) {
        throw IoError("CSV '" + path + "' has no rows");
    }
    return {Tensor::from(Shape{rows, dims}, std::move(values)), std::move(labels)};
}

/// Columns knot_index, time, point_index, x1..xd.
inline std::string trajectory_csv(const Trajectory& traj) {
    std::string out = "knot_index,time,point_index";
    for (std::size_t c = 0; c < traj.dim(); ++c) {
        out += ",x" + std::to_string(c + 1);
    }
    out += '\n';
    const auto& st = traj.states();
    for (std::size_t k = 0; k < st.size(); ++k) {
        for (std::size_t i = 0; i < st[k].batch.rows(); ++i) {
            out += std::to_string(k) + ',';
            io_detail::append_number(out, st[k].time);
            out += ',' + std::to_string(i);
            for (std::size_t c = 0; c < st[k].batch.cols(); ++c) {
                out += ',';
                io_detail::append_number(out, st[k].batch(i, c));
            }
            out += '\n';
        }
    }
    return out;
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    io_detail::write_file(path, trajectory_csv(traj));
}

inline std::string residual_csv(const ResidualGrid& grid) {
    std::string out = "t,r,residual_expectation,residual_flow_map\n";
    for (const auto& c : grid.cells) {
        io_detail::append_number(out, c.t);
        out += ',';
        io_detail::append_number(out, c.r);
        out += ',';
        io_detail::append_number(out, c.residual_expectation);
        out += ',';
        io_detail::append_number(out, c.residual_flow_map);
        out += '\n';
    }
    return out;
}

} // namespace tfm
