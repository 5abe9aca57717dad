#include "cotrainlab/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>

#include "cotrainlab/error.hpp"

namespace cotrainlab::data {

// ---------------------------------------------------------------------------
// Dataset

bool Dataset::has_attrs() const noexcept {
    return !attrs.empty() && attrs.size() == images.size() &&
           std::none_of(attrs.begin(), attrs.end(), [](int a) { return a < 0; });
}

void Dataset::push_back(Image img, int label, int attr, std::uint64_t id) {
    images.push_back(std::move(img));
    labels.push_back(label);
    if (attr != kNoAttr || !attrs.empty()) {
        attrs.resize(images.size() - 1, kNoAttr);
        attrs.push_back(attr);
    }
    ids.push_back(id);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.n_classes = n_classes;
    out.images.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= size()) throw InvalidInputError("subset: index out of range");
        out.images.push_back(images[i]);
        out.labels.push_back(labels[i]);
        if (!attrs.empty()) out.attrs.push_back(attrs[i]);
        out.ids.push_back(ids[i]);
    }
    return out;
}

void Dataset::validate() const {
    if (labels.size() != images.size() || ids.size() != images.size() ||
        (!attrs.empty() && attrs.size() != images.size())) {
        throw InvalidInputError("dataset: parallel sequences differ in length");
    }
    std::unordered_set<std::uint64_t> seen;
    for (std::size_t i = 0; i < size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes) {
            throw InvalidInputError("dataset: label " + std::to_string(labels[i]) + " at index " +
                                    std::to_string(i) + " outside [0, " +
                                    std::to_string(n_classes) + ")");
        }
        if (!images[i].same_shape(images[0])) throw InvalidInputError("dataset: mixed image shapes");
        if (!seen.insert(ids[i]).second) {
            throw InvalidInputError("dataset: duplicate id " + std::to_string(ids[i]));
        }
    }
}

// ---------------------------------------------------------------------------
// Splits

Splits make_splits(const Dataset& ds, const SplitSpec& spec) {
    if (spec.labeled_per_class < 0) throw InvalidConfigError("split: labeled_per_class must be >= 0");
    if (spec.val_fraction < 0 || spec.val_fraction >= 1) {
        throw InvalidConfigError("split: val_fraction must be in [0, 1)");
    }
    const std::size_t total = ds.size();
    Rng rng(derive_seed(spec.seed, "split"));

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.n_classes));
    for (std::size_t i = 0; i < total; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<char> taken(total, 0);
    std::vector<std::size_t> labeled;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.size() < static_cast<std::size_t>(spec.labeled_per_class)) {
            throw InvalidConfigError("split: class " + std::to_string(c) + " has " +
                                     std::to_string(members.size()) + " examples, " +
                                     std::to_string(spec.labeled_per_class) + " requested");
        }
        rng.shuffle(std::span<std::size_t>(members));
        for (int k = 0; k < spec.labeled_per_class; ++k) {
            labeled.push_back(members[static_cast<std::size_t>(k)]);
            taken[members[static_cast<std::size_t>(k)]] = 1;
        }
    }

    const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(total)));
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < total; ++i) {
        if (!taken[i]) rest.push_back(i);
    }
    if (n_val > rest.size()) {
        throw InvalidConfigError("split: labeled + validation exceed the dataset size");
    }
    rng.shuffle(std::span<std::size_t>(rest));
    std::vector<std::size_t> validation(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> unlabeled(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());

    std::sort(labeled.begin(), labeled.end());
    std::sort(validation.begin(), validation.end());
    std::sort(unlabeled.begin(), unlabeled.end());
    return {ds.subset(labeled), ds.subset(validation), ds.subset(unlabeled)};
}

// ---------------------------------------------------------------------------
// SynthST

namespace {

struct Point {
    double x, y;
};

constexpr int kMotifs = 6;

std::vector<Point> motif_polygon(int motif) {
    auto ring = [](std::initializer_list<double> degrees, double radius = 1.0) {
        std::vector<Point> pts;
        for (double d : degrees) {
            const double a = d * M_PI / 180.0;
            pts.push_back({radius * std::cos(a), radius * std::sin(a)});
        }
        return pts;
    };
    switch (motif) {
        case 0: return ring({-90, 30, 150});  // triangle
        case 1: return ring({45, 135, 225, 315});  // square
        case 2: {  // plus-shaped cross
            const double w = 0.33;
            return {{w, 1}, {w, w}, {1, w}, {1, -w}, {w, -w}, {w, -1},
                    {-w, -1}, {-w, -w}, {-1, -w}, {-1, w}, {-w, w}, {-w, 1}};
        }
        case 4: {  // five-pointed star
            std::vector<Point> pts;
            for (int k = 0; k < 10; ++k) {
                const double a = (-90.0 + 36.0 * k) * M_PI / 180.0;
                const double r = k % 2 == 0 ? 1.0 : 0.45;
                pts.push_back({r * std::cos(a), r * std::sin(a)});
            }
            return pts;
        }
        case 5: return {{1, 0.45}, {-1, 0.45}, {-1, -0.45}, {1, -0.45}};  // bar
        default: return {};  // 3: circle, handled analytically
    }
}

double segment_distance(Point p, Point a, Point b) noexcept {
    const double vx = b.x - a.x;
    const double vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

// Unit-ish RGB directions for attribute hues.
constexpr std::array<std::array<double, 3>, kMotifs> kAttrHues{{
    {1.0, -0.5, -0.5},
    {-0.5, 1.0, -0.5},
    {-0.5, -0.5, 1.0},
    {0.8, 0.8, -1.0},
    {-1.0, 0.8, 0.8},
    {0.8, -1.0, 0.8},
}};

constexpr std::array<std::array<double, 3>, kMotifs> kClassTints{{
    {0.30, 0.00, 0.00},
    {0.00, 0.30, 0.00},
    {0.00, 0.00, 0.30},
    {0.25, 0.25, 0.00},
    {0.00, 0.25, 0.25},
    {0.25, 0.00, 0.25},
}};

void check_synth(int n_classes) {
    if (n_classes < 2 || n_classes > kMotifs) {
        throw InvalidConfigError("synthst: n_classes must be in [2, " + std::to_string(kMotifs) +
                                 "], got " + std::to_string(n_classes));
    }
}

int draw_attr(int cls, int n_classes, double texture_rho, Rng& rng) {
    if (rng.bernoulli(texture_rho)) return cls;
    const int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes - 1)));
    return other >= cls ? other + 1 : other;
}

}  // namespace

int synthst_motif_count() noexcept { return kMotifs; }

imagefx::Tint synthst_tints(int n_classes) {
    check_synth(n_classes);
    imagefx::Tint t;
    t.rgb_offset.assign(kClassTints.begin(), kClassTints.begin() + n_classes);
    return t;
}

Image render_synthst(int cls, int attr, bool tinted, int n_classes, const SynthStyle& style,
                     Rng& rng) {
    check_synth(n_classes);
    if (cls < 0 || cls >= n_classes || attr < 0 || attr >= n_classes) {
        throw InvalidInputError("render_synthst: class/attr out of range");
    }
    const int side = style.img_side;
    if (side < 8) throw InvalidConfigError("synthst: img_side must be >= 8");

    // Background: base gray + attribute hue + oriented stripes.
    const double base = rng.uniform(0.4, 0.6);
    const double theta = M_PI * attr / n_classes;
    const double period = 3.5 + 0.5 * (attr % 2);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double kx = std::cos(theta) * 2.0 * M_PI / period;
    const double ky = std::sin(theta) * 2.0 * M_PI / period;
    const auto& hue = kAttrHues[static_cast<std::size_t>(attr)];

    // Outline geometry.
    const double radius = side * rng.uniform(style.min_radius, style.max_radius);
    const double jitter = side * 0.5 - radius - 1.0;
    const Point center{side * 0.5 - 0.5 + rng.uniform(-1.0, 1.0) * std::max(jitter, 0.0),
                       side * 0.5 - 0.5 + rng.uniform(-1.0, 1.0) * std::max(jitter, 0.0)};
    const double spin = rng.uniform(-12.0, 12.0) * M_PI / 180.0;
    const double polarity = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double ink = std::clamp(base + polarity * style.outline_contrast, 0.0, 1.0);
    const bool gap = rng.bernoulli(style.gap_probability);
    const double gap_start = rng.uniform(-M_PI, M_PI);
    const double gap_width = M_PI / 3.0;

    std::vector<Point> poly;
    for (Point p : motif_polygon(cls)) {
        const double x = p.x * std::cos(spin) - p.y * std::sin(spin);
        const double y = p.x * std::sin(spin) + p.y * std::cos(spin);
        poly.push_back({center.x + radius * x, center.y + radius * y});
    }

    struct Segment {
        Point a, b;
    };
    std::vector<Segment> clutter;
    const auto n_clutter = static_cast<int>(rng.below(static_cast<std::uint64_t>(style.max_clutter + 1)));
    for (int k = 0; k < n_clutter; ++k) {
        const Point a{rng.uniform(0.0, side - 1.0), rng.uniform(0.0, side - 1.0)};
        const double len = side * rng.uniform(0.2, 0.33);
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        clutter.push_back({a, {a.x + len * std::cos(ang), a.y + len * std::sin(ang)}});
    }

    const double half = style.outline_width * 0.5;
    Image img(side, side, 3);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const Point p{static_cast<double>(x), static_cast<double>(y)};
            double d;
            if (poly.empty()) {
                d = std::abs(std::hypot(p.x - center.x, p.y - center.y) - radius);
            } else {
                d = 1e9;
                for (std::size_t k = 0; k < poly.size(); ++k) {
                    d = std::min(d, segment_distance(p, poly[k], poly[(k + 1) % poly.size()]));
                }
            }
            if (gap) {
                double rel = std::atan2(p.y - center.y, p.x - center.x) - gap_start;
                rel = std::remainder(rel, 2.0 * M_PI);
                if (rel >= 0 && rel < gap_width) d = 1e9;
            }
            for (const Segment& s : clutter) d = std::min(d, segment_distance(p, s.a, s.b));
            const double cover = std::clamp(half + 0.5 - d, 0.0, 1.0);
            const double stripe = style.texture_amplitude * std::sin(kx * x + ky * y + phase);
            for (int c = 0; c < 3; ++c) {
                const double bg = base + style.attr_color_strength * hue[static_cast<std::size_t>(c)] + stripe;
                const double v = (1.0 - cover) * bg + cover * ink + style.noise_sigma * rng.normal();
                img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    if (tinted) img = imagefx::apply_tint(img, static_cast<std::size_t>(cls), synthst_tints(n_classes));
    return img;
}

Dataset gen_synthst(const SynthSpec& spec, std::uint64_t seed, std::uint64_t first_id) {
    check_synth(spec.n_classes);
    if (spec.n_per_class < 0) throw InvalidConfigError("synthst: n_per_class must be >= 0");
    if (spec.texture_rho < 0 || spec.texture_rho > 1 || spec.tint_rho < 0 || spec.tint_rho > 1) {
        throw InvalidConfigError("synthst: rho values must lie in [0, 1]");
    }
    Dataset ds;
    ds.n_classes = spec.n_classes;
    const std::size_t total = static_cast<std::size_t>(spec.n_classes) * spec.n_per_class;
    for (std::size_t k = 0; k < total; ++k) {
        const std::uint64_t id = first_id + k;
        const int cls = static_cast<int>(k % static_cast<std::size_t>(spec.n_classes));
        Rng rng(derive_seed(seed, "synthst", id));
        const int attr = draw_attr(cls, spec.n_classes, spec.texture_rho, rng);
        const bool tinted = rng.bernoulli(spec.tint_rho);
        ds.push_back(render_synthst(cls, attr, tinted, spec.n_classes, spec.style, rng), cls, attr, id);
    }
    return ds;
}

Dataset rerender_synthst(const Dataset& ds, const SynthSpec& spec, std::uint64_t seed) {
    check_synth(spec.n_classes);
    Dataset out;
    out.n_classes = ds.n_classes;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Rng rng(derive_seed(seed, "rerender", ds.ids[i]));
        const int cls = ds.labels[i];
        const int attr = draw_attr(cls, spec.n_classes, spec.texture_rho, rng);
        const bool tinted = rng.bernoulli(spec.tint_rho);
        out.push_back(render_synthst(cls, attr, tinted, spec.n_classes, spec.style, rng), cls, attr,
                      ds.ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Skewed builders

SkewSpec celeba_default() {
    SkewSpec s;
    s.labeled_counts = {{{0, 0}, 500}, {{1, 1}, 500}};
    s.unlabeled_counts = {{{0, 0}, 1000}, {{0, 1}, 1000}, {{1, 0}, 1000}, {{1, 1}, 1000}};
    // class 0 = male, 1 = female; attr 0 = non-blond, 1 = blond
    s.test_mix = {{{1, 1}, 0.1241}, {{1, 0}, 0.4892}, {{0, 1}, 0.0090}, {{0, 0}, 0.3777}};
    s.test_size = 10000;
    s.n_attrs = 2;
    return s;
}

SkewSpec celeba_fullskew() {
    SkewSpec s = celeba_default();
    s.unlabeled_counts = {{{0, 0}, 2000}, {{0, 1}, 0}, {{1, 0}, 0}, {{1, 1}, 2000}};
    return s;
}

std::map<Cell, int> round_mix(const std::map<Cell, double>& mix, int n) {
    if (n < 0) throw InvalidConfigError("test mix: size must be >= 0");
    double total = 0.0;
    for (const auto& [cell, f] : mix) {
        if (f < 0 || !std::isfinite(f)) throw InvalidConfigError("test mix: fractions must be >= 0");
        total += f;
    }
    if (!mix.empty() && std::abs(total - 1.0) > 1e-9) {
        throw InvalidConfigError("test mix: fractions sum to " + std::to_string(total) + ", not 1");
    }
    std::map<Cell, int> counts;
    std::vector<std::pair<double, Cell>> remainders;
    int assigned = 0;
    for (const auto& [cell, f] : mix) {
        const double exact = f * n;
        // Guard against 0.1241 * 10000 = 1240.9999999.
        const double floored = std::floor(exact + 1e-9);
        counts[cell] = static_cast<int>(floored);
        assigned += counts[cell];
        remainders.emplace_back(std::max(0.0, exact - floored), cell);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n && !remainders.empty(); ++k, ++assigned) {
        counts[remainders[k % remainders.size()].second] += 1;
    }
    return counts;
}

namespace {

void check_cells(const std::map<Cell, int>& counts, int n_classes, int n_attrs, const char* what) {
    for (const auto& [cell, count] : counts) {
        if (cell.first < 0 || cell.first >= n_classes || cell.second < 0 || cell.second >= n_attrs) {
            throw InvalidConfigError(std::string(what) + ": cell (" + std::to_string(cell.first) +
                                     "," + std::to_string(cell.second) + ") out of range");
        }
        if (count < 0) throw InvalidConfigError(std::string(what) + ": negative cell count");
    }
}

}  // namespace

SkewedSplits build_skewed(const CellSource& source, int n_classes, const SkewSpec& spec,
                          std::uint64_t seed) {
    check_cells(spec.labeled_counts, n_classes, spec.n_attrs, "labeled counts");
    check_cells(spec.unlabeled_counts, n_classes, spec.n_attrs, "unlabeled counts");
    const auto test_counts = round_mix(spec.test_mix, spec.test_size);
    check_cells(test_counts, n_classes, spec.n_attrs, "test mix");

    std::uint64_t next_id = 0;
    auto render = [&](const std::map<Cell, int>& counts, const char* tag) {
        Dataset ds;
        ds.n_classes = n_classes;
        for (const auto& [cell, count] : counts) {
            for (int k = 0; k < count; ++k) {
                Rng rng(derive_seed(seed, tag, next_id));
                ds.push_back(source(cell.first, cell.second, rng), cell.first, cell.second, next_id);
                ++next_id;
            }
        }
        return ds;
    };
    SkewedSplits out;
    out.labeled = render(spec.labeled_counts, "skew-labeled");
    out.unlabeled = render(spec.unlabeled_counts, "skew-unlabeled");
    out.test = render(test_counts, "skew-test");
    return out;
}

SkewedSplits build_skewed(const Dataset& pool, const SkewSpec& spec, std::uint64_t seed) {
    if (!pool.has_attrs()) throw InvalidInputError("build_skewed: pool has no attributes");
    check_cells(spec.labeled_counts, pool.n_classes, spec.n_attrs, "labeled counts");
    check_cells(spec.unlabeled_counts, pool.n_classes, spec.n_attrs, "unlabeled counts");
    const auto test_counts = round_mix(spec.test_mix, spec.test_size);
    check_cells(test_counts, pool.n_classes, spec.n_attrs, "test mix");

    std::map<Cell, std::vector<std::size_t>> by_cell;
    for (std::size_t i = 0; i < pool.size(); ++i) by_cell[{pool.labels[i], pool.attrs[i]}].push_back(i);
    Rng rng(derive_seed(seed, "skew-pool"));
    for (auto& [cell, idx] : by_cell) rng.shuffle(std::span<std::size_t>(idx));

    std::map<Cell, std::size_t> cursor;
    auto draw = [&](const std::map<Cell, int>& counts) {
        std::vector<std::size_t> chosen;
        for (const auto& [cell, count] : counts) {
            auto& members = by_cell[cell];
            auto& pos = cursor[cell];
            if (pos + static_cast<std::size_t>(count) > members.size()) {
                throw InvalidConfigError("build_skewed: cell (" + std::to_string(cell.first) + "," +
                                         std::to_string(cell.second) + ") needs " +
                                         std::to_string(pos + count) + " examples, pool has " +
                                         std::to_string(members.size()));
            }
            for (int k = 0; k < count; ++k) chosen.push_back(members[pos++]);
        }
        return pool.subset(chosen);
    };
    SkewedSplits out;
    out.labeled = draw(spec.labeled_counts);
    out.unlabeled = draw(spec.unlabeled_counts);
    out.test = draw(test_counts);
    return out;
}

std::map<Cell, int> contingency(const Dataset& ds) {
    std::map<Cell, int> out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out[{ds.labels[i], ds.attrs.empty() ? kNoAttr : ds.attrs[i]}] += 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pool

PseudoLabelPool pool_add(PseudoLabelPool pool, std::span<const PoolEntry> entries) {
    pool.entries.insert(pool.entries.end(), entries.begin(), entries.end());
    return pool;
}

std::size_t pool_unique_count(const PseudoLabelPool& pool, std::optional<int> cls) {
    std::unordered_set<std::uint64_t> ids;
    for (const auto& e : pool.entries) {
        if (!cls || e.label == *cls) ids.insert(e.example_id);
    }
    return ids.size();
}

// ---------------------------------------------------------------------------
// Raw format

namespace {

constexpr std::array<char, 4> kDataMagic{'C', 'T', 'D', 'S'};
constexpr std::uint16_t kDataVersion = 1;
constexpr std::size_t kDataHeaderBytes = 4 + 2 + 4 * 4;

template <class T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
    }
}

template <class T>
T get_le(const std::string& in, std::size_t offset) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return static_cast<T>(v);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

long long parse_int(const std::string& s, const std::string& file, std::size_t line) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(file, line, "expected an integer, got '" + s + "'");
    }
}

}  // namespace

void save_raw(const Dataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    const Image empty;
    const Image& first = ds.size() > 0 ? ds.images[0] : empty;

    std::string bin;
    bin.append(kDataMagic.begin(), kDataMagic.end());
    put_le<std::uint16_t>(bin, kDataVersion);
    put_le<std::uint32_t>(bin, static_cast<std::uint32_t>(ds.size()));
    put_le<std::uint32_t>(bin, static_cast<std::uint32_t>(first.height));
    put_le<std::uint32_t>(bin, static_cast<std::uint32_t>(first.width));
    put_le<std::uint32_t>(bin, static_cast<std::uint32_t>(first.channels));
    for (const Image& img : ds.images) {
        for (double v : img.data) {
            bin.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
        }
    }
    std::ofstream out(dir / "data.bin", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "data.bin").string());
    out.write(bin.data(), static_cast<std::streamsize>(bin.size()));

    std::ofstream csv(dir / "labels.csv");
    if (!csv) throw IoError("cannot write " + (dir / "labels.csv").string());
    csv << "id,label,attr\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        csv << ds.ids[i] << ',' << ds.labels[i] << ',';
        if (!ds.attrs.empty() && ds.attrs[i] != kNoAttr) csv << ds.attrs[i];
        csv << '\n';
    }
}

Dataset load_raw(const std::filesystem::path& dir, std::optional<int> n_classes) {
    const auto bin_path = dir / "data.bin";
    const std::string bin_name = bin_path.string();
    const std::string bin = read_file(bin_path);
    if (bin.size() < 4 || !std::equal(kDataMagic.begin(), kDataMagic.end(), bin.begin())) {
        throw FormatError(bin_name, 0, "bad magic, expected \"CTDS\"");
    }
    if (bin.size() < kDataHeaderBytes) throw FormatError(bin_name, bin.size(), "truncated header");
    const auto version = get_le<std::uint16_t>(bin, 4);
    if (version != kDataVersion) {
        throw FormatError(bin_name, 4, "unsupported version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(bin, 6);
    const auto h = get_le<std::uint32_t>(bin, 10);
    const auto w = get_le<std::uint32_t>(bin, 14);
    const auto c = get_le<std::uint32_t>(bin, 18);
    if (count > 0 && (h == 0 || w == 0 || (c != 1 && c != 3))) {
        throw FormatError(bin_name, 10, "bad image dims " + std::to_string(h) + "x" +
                                            std::to_string(w) + "x" + std::to_string(c));
    }
    const std::size_t per_image = static_cast<std::size_t>(h) * w * c;
    const std::size_t expected = kDataHeaderBytes + per_image * count;
    if (bin.size() != expected) {
        throw FormatError(bin_name, std::min(bin.size(), expected),
                          "payload length " + std::to_string(bin.size() - kDataHeaderBytes) +
                              " bytes, expected " + std::to_string(expected - kDataHeaderBytes));
    }

    const auto csv_path = dir / "labels.csv";
    const std::string csv_name = csv_path.string();
    std::istringstream csv(read_file(csv_path));
    std::string line;
    if (!std::getline(csv, line) || (line != "id,label,attr" && line != "id,label,attr\r")) {
        throw FormatError(csv_name, 1, "expected header 'id,label,attr'");
    }
    struct Row {
        std::uint64_t id;
        int label;
        int attr;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3) throw FormatError(csv_name, line_no, "expected 3 fields");
        const long long id = parse_int(fields[0], csv_name, line_no);
        const long long label = parse_int(fields[1], csv_name, line_no);
        const long long attr = fields[2].empty() ? kNoAttr : parse_int(fields[2], csv_name, line_no);
        if (id < 0 || label < 0 || (n_classes && label >= *n_classes) || attr < kNoAttr) {
            throw FormatError(csv_name, line_no, "value out of range");
        }
        rows.push_back({static_cast<std::uint64_t>(id), static_cast<int>(label), static_cast<int>(attr)});
    }
    if (rows.size() != count) {
        throw FormatError(csv_name, line_no, "labels.csv has " + std::to_string(rows.size()) +
                                                 " rows, data.bin has " + std::to_string(count) +
                                                 " images");
    }

    Dataset ds;
    int max_label = -1;
    for (std::size_t i = 0; i < count; ++i) {
        Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
        const std::size_t base = kDataHeaderBytes + i * per_image;
        for (std::size_t k = 0; k < per_image; ++k) {
            img.data[k] = static_cast<unsigned char>(bin[base + k]) / 255.0;
        }
        ds.push_back(std::move(img), rows[i].label, rows[i].attr, rows[i].id);
        max_label = std::max(max_label, rows[i].label);
    }
    if (std::none_of(ds.attrs.begin(), ds.attrs.end(), [](int a) { return a != kNoAttr; })) {
        ds.attrs.clear();
    }
    ds.n_classes = n_classes.value_or(max_label + 1);
    try {
        ds.validate();
    } catch (const InvalidInputError& e) {
        throw FormatError(csv_name, 0, e.what());
    }
    return ds;
}

}  // namespace cotrainlab::data
