#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cotrainlab/image.hpp"
#include "cotrainlab/imagefx.hpp"
#include "cotrainlab/rng.hpp"

namespace cotrainlab::data {

inline constexpr int kNoAttr = -1;

// Parallel sequences: images[i] has label labels[i], spurious attribute
// attrs[i] (attrs empty when the dataset carries none) and stable id ids[i].
struct Dataset {
    int n_classes = 0;
    std::vector<Image> images;
    std::vector<int> labels;
    std::vector<int> attrs;
    std::vector<std::uint64_t> ids;

    std::size_t size() const noexcept { return images.size(); }
    bool has_attrs() const noexcept;

    void push_back(Image img, int label, int attr, std::uint64_t id);

    // Examples at `indices`, in that order.
    Dataset subset(std::span<const std::size_t> indices) const;

    // Throws InvalidInputError on length mismatch, out-of-range labels,
    // mixed image shapes or duplicate ids.
    void validate() const;
};

struct SplitSpec {
    int labeled_per_class = 100;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

struct Splits {
    Dataset labeled;
    Dataset validation;
    Dataset unlabeled;
};

// Exactly labeled_per_class examples of every class go to `labeled`,
// round(val_fraction * total) uniformly drawn examples of the rest go to
// `validation`, and the remainder is `unlabeled`. Each split keeps the
// source order.
Splits make_splits(const Dataset& ds, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// SynthST: class = shape outline, attribute = background texture (stripe
// orientation, plus an optional hue). Outlines are high contrast and survive
// edge detection; the stripes are low contrast and disappear under it, while
// a windowed model reads them easily. Defaults leave the hue off so the
// texture is a cue a small window has to work for, not a free color shortcut.

int synthst_motif_count() noexcept;

struct SynthStyle {
    int img_side = 24;
    double outline_contrast = 0.5;
    double outline_width = 1.4;
    double texture_amplitude = 0.06;
    double attr_color_strength = 0.0;
    double noise_sigma = 0.02;
    int max_clutter = 2;          // distractor segments per image, uniform in [0, max]
    double gap_probability = 0.3;  // chance an outline loses an arc
    double min_radius = 0.22;      // fraction of img_side
    double max_radius = 0.38;
};

struct SynthSpec {
    int n_classes = 4;
    int n_per_class = 100;
    double texture_rho = 1.0;  // P(attr == class)
    double tint_rho = 0.0;     // P(class tint applied)
    SynthStyle style;
};

// Hand-picked per-class RGB offsets for the tinted variant.
imagefx::Tint synthst_tints(int n_classes);

// One example of (cls, attr). Deterministic in the generator state.
Image render_synthst(int cls, int attr, bool tinted, int n_classes, const SynthStyle& style,
                     Rng& rng);

// attr == class with probability texture_rho, otherwise uniform over the
// remaining attributes, so texture_rho = 1/n_classes decouples the two.
// Example k has class k % n_classes and id first_id + k.
Dataset gen_synthst(const SynthSpec& spec, std::uint64_t seed, std::uint64_t first_id = 0);

// Re-draws the attribute/tint of every example of `ds` under `spec` with a
// fresh rendering. Ids and labels are kept.
Dataset rerender_synthst(const Dataset& ds, const SynthSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Skewed (class, attribute) contingency builders.

using Cell = std::pair<int, int>;  // (class, attr)

struct SkewSpec {
    std::map<Cell, int> labeled_counts;
    std::map<Cell, int> unlabeled_counts;
    std::map<Cell, double> test_mix;
    int test_size = 0;
    int n_attrs = 2;
};

// 500 non-blond males (0,0) and 500 blond females (1,1) labeled; 1000 of every
// cell unlabeled; test mix of the standard CelebA test set.
SkewSpec celeba_default();
// Same, but the unlabeled set repeats the labeled skew: 2000 (0,0) and
// 2000 (1,1).
SkewSpec celeba_fullskew();

// floor(f * n) per cell, remainder to the largest fractional parts (ties in
// map order).
std::map<Cell, int> round_mix(const std::map<Cell, double>& mix, int n);

struct SkewedSplits {
    Dataset labeled;
    Dataset unlabeled;
    Dataset test;
};

using CellSource = std::function<Image(int cls, int attr, Rng& rng)>;

// Renders every requested example from `source`.
SkewedSplits build_skewed(const CellSource& source, int n_classes, const SkewSpec& spec,
                          std::uint64_t seed);

// Draws without replacement from an attributed pool; InvalidConfigError when
// a cell does not hold enough examples.
SkewedSplits build_skewed(const Dataset& pool, const SkewSpec& spec, std::uint64_t seed);

// (class, attr) -> count
std::map<Cell, int> contingency(const Dataset& ds);

// ---------------------------------------------------------------------------
// Pseudo-label pool. A multiset: an example may appear several times, with
// the same or different labels.

struct PoolEntry {
    std::uint64_t example_id = 0;
    int label = 0;
    int source = 0;  // index of the model that produced the entry
    double confidence = 0.0;

    friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

struct PseudoLabelPool {
    std::vector<PoolEntry> entries;

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
};

PseudoLabelPool pool_add(PseudoLabelPool pool, std::span<const PoolEntry> entries);

// Distinct example ids, optionally restricted to entries labeled `cls`.
std::size_t pool_unique_count(const PseudoLabelPool& pool, std::optional<int> cls = std::nullopt);

// ---------------------------------------------------------------------------
// Raw on-disk format: <dir>/data.bin and <dir>/labels.csv.
//   data.bin   "CTDS", u16 version = 1, u32 count, u32 H, u32 W, u32 C, then
//              count*H*W*C bytes (intensity * 255, rounded), little-endian
//   labels.csv header "id,label,attr"; attr may be empty

void save_raw(const Dataset& ds, const std::filesystem::path& dir);

// n_classes: when absent, inferred as max(label) + 1.
Dataset load_raw(const std::filesystem::path& dir, std::optional<int> n_classes = std::nullopt);

}  // namespace cotrainlab::data
