#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tfm/objectives.hpp"

namespace tfm {

enum class DatasetKind { LETTER_GLYPH, GAUSSIAN_MIXTURE, MOONS, CHECKERBOARD, GAUSSIAN };
enum class SourceKind { STD_GAUSSIAN, RING };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::LETTER_GLYPH;
    std::string glyph = "M";
    std::size_t components = 8;
    double mixture_radius = 1.0;
    double mixture_std = 0.1;
    double moon_noise = 0.1;
    /// Max-abs coordinate after normalization (all families but GAUSSIAN).
    double scale = 2.0;
    std::vector<double> gaussian_mean{0.0, 0.0};
    double gaussian_std = 1.0;
    std::size_t n_classes = 0;

    std::size_t dim() const { return kind == DatasetKind::GAUSSIAN ? gaussian_mean.size() : 2; }

    void validate() const;

    bool operator==(const DatasetSpec&) const = default;
};

struct SourceSpec {
    SourceKind kind = SourceKind::STD_GAUSSIAN;
    double radius = 1.0;
    double width = 0.1;
    std::size_t dim = 2;

    void validate() const {
        if (dim == 0) {
            throw ValidationError("source.dim", "must be positive");
        }
        if (kind == SourceKind::RING) {
            if (!(radius > 0.0)) {
                throw ValidationError("source.radius", "ring radius must be positive");
            }
            if (!(width >= 0.0)) {
                throw ValidationError("source.width", "ring width must be nonnegative");
            }
            if (dim != 2) {
                throw ValidationError("source.dim", "ring source is two-dimensional");
            }
        }
    }

    bool operator==(const SourceSpec&) const = default;
};

struct TargetSet {
    Tensor points;
    /// One id per point, or empty for unlabeled data.
    ClassIds labels;
};

namespace data_detail {

using GlyphRows = std::array<const char*, 7>;

/// Blocky 5x7 capitals; '1' marks an inked cell.
inline const GlyphRows* glyph_rows(char c) {
    static const GlyphRows font[26] = {
        {"01110", "10001", "10001", "11111", "10001", "10001", "10001"}, // A
        {"11110", "10001", "10001", "11110", "10001", "10001", "11110"}, // B
        {"01110", "10001", "10000", "10000", "10000", "10001", "01110"}, // C
        {"11110", "10001", "10001", "10001", "10001", "10001", "11110"}, // D
        {"11111", "10000", "10000", "11110", "10000", "10000", "11111"}, // E
        {"11111", "10000", "10000", "11110", "10000", "10000", "10000"}, // F
        {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}, // G
        {"10001", "10001", "10001", "11111", "10001", "10001", "10001"}, // H
        {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}, // I
        {"00111", "00010", "00010", "00010", "00010", "10010", "01100"}, // J
        {"10001", "10010", "10100", "11000", "10100", "10010", "10001"}, // K
        {"10000", "10000", "10000", "10000", "10000", "10000", "11111"}, // L
        {"10001", "11011", "10101", "10101", "10001", "10001", "10001"}, // M
        {"10001", "10001", "11001", "10101", "10011", "10001", "10001"}, // N
        {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}, // O
        {"11110", "10001", "10001", "11110", "10000", "10000", "10000"}, // P
        {"01110", "10001", "10001", "10001", "10101", "10010", "01101"}, // Q
        {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}, // R
        {"01111", "10000", "10000", "01110", "00001", "00001", "11110"}, // S
        {"11111", "00100", "00100", "00100", "00100", "00100", "00100"}, // T
        {"10001", "10001", "10001", "10001", "10001", "10001", "01110"}, // U
        {"10001", "10001", "10001", "10001", "10001", "01010", "00100"}, // V
        {"10001", "10001", "10001", "10101", "10101", "10101", "01010"}, // W
        {"10001", "10001", "01010", "00100", "01010", "10001", "10001"}, // X
        {"10001", "10001", "01010", "00100", "00100", "00100", "00100"}, // Y
        {"11111", "00001", "00010", "00100", "01000", "10000", "11111"}, // Z
    };
    static const GlyphRows blank = {"00000", "00000", "00000", "00000", "00000", "00000", "00000"};
    if (c == ' ') {
        return &blank;
    }
    if (c >= 'a' && c <= 'z') {
        c = static_cast<char>(c - 'a' + 'A');
    }
    if (c < 'A' || c > 'Z') {
        return nullptr;
    }
    return &font[c - 'A'];
}

inline constexpr std::size_t kRaster = 64;

/// 64x64 raster of the glyph string; each font cell becomes a square block.
/// Entry value is the 1-based character index of the inked cell, 0 if blank.
struct Raster {
    std::vector<int> cells = std::vector<int>(kRaster * kRaster, 0);
    std::size_t inked = 0;
};

inline Raster rasterize(const std::string& text) {
    if (text.empty()) {
        throw ValidationError("dataset.glyph", "glyph string is empty");
    }
    const std::size_t cols = 6 * text.size() - 1;
    const std::size_t block = kRaster / std::max<std::size_t>(cols, 7);
    if (block == 0) {
        throw ValidationError("dataset.glyph", "glyph string too long for a 64x64 raster");
    }
    const std::size_t x_off = (kRaster - block * cols) / 2;
    const std::size_t y_off = (kRaster - block * 7) / 2;
    Raster r;
    for (std::size_t ci = 0; ci < text.size(); ++ci) {
        const GlyphRows* rows = glyph_rows(text[ci]);
        if (rows == nullptr) {
            throw ValidationError("dataset.glyph", std::string("unsupported glyph character '") + text[ci] + "'");
        }
        for (std::size_t gy = 0; gy < 7; ++gy) {
            for (std::size_t gx = 0; gx < 5; ++gx) {
                if ((*rows)[gy][gx] != '1') {
                    continue;
                }
                for (std::size_t py = 0; py < block; ++py) {
                    for (std::size_t px = 0; px < block; ++px) {
                        const std::size_t x = x_off + (6 * ci + gx) * block + px;
                        const std::size_t y = y_off + gy * block + py;
                        r.cells[y * kRaster + x] = static_cast<int>(ci + 1);
                        ++r.inked;
                    }
                }
            }
        }
    }
    if (r.inked == 0) {
        throw ValidationError("dataset.glyph", "glyph raster is empty");
    }
    return r;
}

/// Centre to zero mean, then scale so the largest |coordinate| equals `scale`.
inline void normalize(Tensor& pts, double scale) {
    const std::size_t n = pts.rows();
    const std::size_t d = pts.cols();
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += pts(i, c);
        }
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            pts(i, c) -= mean;
        }
    }
    double top = 0.0;
    for (double v : pts.storage()) {
        top = std::max(top, std::abs(v));
    }
    if (top > 0.0) {
        const double k = scale / top;
        for (double& v : pts.storage()) {
            v *= k;
        }
    }
}

} // namespace data_detail

inline void DatasetSpec::validate() const {
    if (!(scale > 0.0)) {
        throw ValidationError("dataset.scale", "must be positive");
    }
    switch (kind) {
    case DatasetKind::LETTER_GLYPH:
        data_detail::rasterize(glyph);
        if (n_classes != 0 && n_classes != glyph.size()) {
            throw ValidationError("dataset.n_classes", "glyph labels are per character; use 0 or the glyph length");
        }
        break;
    case DatasetKind::GAUSSIAN_MIXTURE:
        if (components == 0) {
            throw ValidationError("dataset.components", "must be positive");
        }
        if (!(mixture_radius > 0.0) || !(mixture_std > 0.0)) {
            throw ValidationError("dataset.mixture_std", "radius and std must be positive");
        }
        if (n_classes != 0 && n_classes != components) {
            throw ValidationError("dataset.n_classes", "mixture labels are per component; use 0 or components");
        }
        break;
    case DatasetKind::MOONS:
        if (!(moon_noise >= 0.0)) {
            throw ValidationError("dataset.moon_noise", "must be nonnegative");
        }
        if (n_classes != 0 && n_classes != 2) {
            throw ValidationError("dataset.n_classes", "moons have 0 or 2 classes");
        }
        break;
    case DatasetKind::CHECKERBOARD:
        if (n_classes != 0) {
            throw ValidationError("dataset.n_classes", "checkerboard is unlabeled");
        }
        break;
    case DatasetKind::GAUSSIAN:
        if (gaussian_mean.empty()) {
            throw ValidationError("dataset.gaussian_mean", "must be nonempty");
        }
        if (!(gaussian_std > 0.0)) {
            throw ValidationError("dataset.gaussian_std", "must be positive");
        }
        if (n_classes != 0) {
            throw ValidationError("dataset.n_classes", "gaussian target is unlabeled");
        }
        break;
    }
}

/// Draws `n` target points (and labels when the dataset is labeled).
inline TargetSet make_target(const DatasetSpec& spec, std::size_t n, Rng& rng) {
    if (n == 0) {
        throw ContractError("make_target needs n > 0");
    }
    spec.validate();
    const std::size_t d = spec.dim();
    TargetSet out{Tensor(Shape{n, d}), {}};
    const bool labeled = spec.n_classes > 0;
    if (labeled) {
        out.labels.resize(n);
    }
    switch (spec.kind) {
    case DatasetKind::LETTER_GLYPH: {
        const auto raster = data_detail::rasterize(spec.glyph);
        const double size = static_cast<double>(data_detail::kRaster);
        for (std::size_t i = 0; i < n; ++i) {
            for (;;) {
                const double x = rng.uniform(0.0, size);
                const double y = rng.uniform(0.0, size);
                const auto cell = raster.cells[static_cast<std::size_t>(y) * data_detail::kRaster + static_cast<std::size_t>(x)];
                if (cell != 0) {
                    out.points(i, 0) = x;
                    out.points(i, 1) = size - y;
                    if (labeled) {
                        out.labels[i] = cell - 1;
                    }
                    break;
                }
            }
        }
        data_detail::normalize(out.points, spec.scale);
        break;
    }
    case DatasetKind::GAUSSIAN_MIXTURE:
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = rng.index(spec.components);
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.components);
            out.points(i, 0) = spec.mixture_radius * std::cos(angle) + spec.mixture_std * rng.normal();
            out.points(i, 1) = spec.mixture_radius * std::sin(angle) + spec.mixture_std * rng.normal();
            if (labeled) {
                out.labels[i] = static_cast<int>(k);
            }
        }
        data_detail::normalize(out.points, spec.scale);
        break;
    case DatasetKind::MOONS:
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t moon = rng.index(2);
            const double a = std::numbers::pi * rng.uniform();
            const double x = moon == 0 ? std::cos(a) : 1.0 - std::cos(a);
            const double y = moon == 0 ? std::sin(a) : 0.5 - std::sin(a);
            out.points(i, 0) = x + spec.moon_noise * rng.normal();
            out.points(i, 1) = y + spec.moon_noise * rng.normal();
            if (labeled) {
                out.labels[i] = static_cast<int>(moon);
            }
        }
        data_detail::normalize(out.points, spec.scale);
        break;
    case DatasetKind::CHECKERBOARD:
        // 4x4 board on [-2, 2]^2; dark squares are those with even (i + j).
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t cell = rng.index(8);
            const std::size_t row = cell / 2;
            const std::size_t col = 2 * (cell % 2) + (row % 2);
            out.points(i, 0) = -2.0 + static_cast<double>(col) + rng.uniform();
            out.points(i, 1) = -2.0 + static_cast<double>(row) + rng.uniform();
        }
        data_detail::normalize(out.points, spec.scale);
        break;
    case DatasetKind::GAUSSIAN:
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                out.points(i, c) = spec.gaussian_mean[c] + spec.gaussian_std * rng.normal();
            }
        }
        break;
    }
    return out;
}

inline void sample_source_row(const SourceSpec& src, std::span<double> out, Rng& rng) {
    if (src.kind == SourceKind::STD_GAUSSIAN) {
        for (double& v : out) {
            v = rng.normal();
        }
        return;
    }
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    const double rad = src.radius + src.width * rng.normal();
    out[0] = rad * std::cos(angle);
    out[1] = rad * std::sin(angle);
}

inline Tensor sample_source(const SourceSpec& src, std::size_t n, Rng& rng) {
    src.validate();
    Tensor out(Shape{n, src.dim});
    for (std::size_t i = 0; i < n; ++i) {
        sample_source_row(src, out.row(i), rng);
    }
    return out;
}

/// Independent coupling: x0 from the source, x1 uniformly (with
/// replacement) from the target set. Batch form; labels follow x1.
inline CouplingBatch sample_coupling_batch(const SourceSpec& src, const TargetSet& target, std::size_t batch, Rng& rng) {
    src.validate();
    if (batch == 0) {
        throw ContractError("coupling batch size must be positive");
    }
    if (target.points.rank() != 2 || target.points.rows() == 0) {
        throw ContractError("coupling target set is empty");
    }
    if (target.points.cols() != src.dim) {
        throw ShapeError("source dim " + std::to_string(src.dim) + " differs from target dim " +
                         std::to_string(target.points.cols()));
    }
    const std::size_t d = src.dim;
    CouplingBatch out{Tensor(Shape{batch, d}), Tensor(Shape{batch, d}), {}};
    const bool labeled = !target.labels.empty();
    if (labeled) {
        out.labels.resize(batch);
    }
    for (std::size_t i = 0; i < batch; ++i) {
        sample_source_row(src, out.x0.row(i), rng);
        const std::size_t j = rng.index(target.points.rows());
        const auto row = target.points.row(j);
        std::copy(row.begin(), row.end(), out.x1.row(i).begin());
        if (labeled) {
            out.labels[i] = target.labels[j];
        }
    }
    return out;
}

inline std::vector<CouplingSample> sample_coupling(const SourceSpec& src, const TargetSet& target, std::size_t batch,
                                                   Rng& rng) {
    const CouplingBatch b = sample_coupling_batch(src, target, batch, rng);
    const std::size_t d = src.dim;
    std::vector<CouplingSample> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const auto r0 = b.x0.row(i);
        const auto r1 = b.x1.row(i);
        CouplingSample s{Tensor(Shape{d}, std::vector<double>(r0.begin(), r0.end())),
                         Tensor(Shape{d}, std::vector<double>(r1.begin(), r1.end())), std::nullopt};
        if (!b.labels.empty()) {
            s.label = b.labels[i];
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<CouplingSample> sample_coupling(const SourceSpec& src, const Tensor& target_points, std::size_t batch,
                                                   Rng& rng) {
    return sample_coupling(src, TargetSet{target_points, {}}, batch, rng);
}

} // namespace tfm
