#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "cotrainlab/data.hpp"
#include "test_util.hpp"

using namespace cotrainlab;
using namespace cotrainlab::data;

namespace {

Dataset tiny_dataset(int n_classes, int per_class) {
    Dataset ds;
    ds.n_classes = n_classes;
    for (int k = 0; k < n_classes * per_class; ++k) {
        ds.push_back(Image(1, 1, 1, (k % 7) / 7.0), k % n_classes, kNoAttr, static_cast<std::uint64_t>(1000 + k));
    }
    return ds;
}

std::set<std::uint64_t> id_set(const Dataset& d) { return {d.ids.begin(), d.ids.end()}; }

void check_partition(const Dataset& all, const Splits& s) {
    std::set<std::uint64_t> seen;
    for (const Dataset* part : {&s.labeled, &s.validation, &s.unlabeled}) {
        for (std::uint64_t id : part->ids) CHECK(seen.insert(id).second);
    }
    CHECK(seen == id_set(all));
}

}  // namespace

TEST_CASE("make_splits sizes") {
    const Dataset stl = tiny_dataset(10, 500);
    const Splits a = make_splits(stl, {100, 0.1, 3});
    CHECK(a.labeled.size() == 1000);
    CHECK(a.validation.size() == 500);
    CHECK(a.unlabeled.size() == 3500);
    check_partition(stl, a);
    std::map<int, int> per_class;
    for (int l : a.labeled.labels) ++per_class[l];
    for (const auto& [cls, count] : per_class) CHECK(count == 100);

    const Dataset cifar = tiny_dataset(10, 5000);
    const Splits b = make_splits(cifar, {100, 0.1, 3});
    CHECK(b.labeled.size() == 1000);
    CHECK(b.validation.size() == 5000);
    CHECK(b.unlabeled.size() == 44000);
    check_partition(cifar, b);

    const Splits again = make_splits(stl, {100, 0.1, 3});
    CHECK(again.validation.ids == a.validation.ids);
    CHECK(make_splits(stl, {100, 0.1, 4}).validation.ids != a.validation.ids);

    CHECK_THROWS_AS(make_splits(tiny_dataset(3, 5), {6, 0.1, 0}), InvalidConfigError);
}

TEST_CASE("property: splits partition the ids for random specs") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(5));
        const int per = 5 + static_cast<int>(rng.below(20));
        const Dataset ds = tiny_dataset(n, per);
        const int lpc = static_cast<int>(rng.below(static_cast<std::uint64_t>(per)));
        // validation drawn from what labeling leaves over
        const double val = rng.uniform(0.0, 0.3) * (per - lpc) / per;
        const SplitSpec spec{lpc, val, rng.next_u64()};
        const Splits s = make_splits(ds, spec);
        check_partition(ds, s);
        CHECK(s.labeled.size() == static_cast<std::size_t>(n * spec.labeled_per_class));
    }
    CHECK_THROWS_AS(make_splits(tiny_dataset(2, 10), {8, 0.3, 0}), InvalidConfigError);
}

TEST_CASE("synthst generation") {
    SynthSpec spec;
    spec.n_per_class = 10;
    spec.style.img_side = 12;
    const Dataset a = gen_synthst(spec, 9);
    CHECK(a.size() == 40);
    CHECK_NOTHROW(a.validate());
    CHECK(a.attrs == a.labels);
    const Dataset b = gen_synthst(spec, 9);
    CHECK(a.images == b.images);
    CHECK(gen_synthst(spec, 10).images != a.images);
    for (const Image& img : a.images) {
        CHECK(img.height == 12);
        for (double v : img.data) CHECK((v >= 0.0 && v <= 1.0));
    }

    spec.n_classes = 7;
    CHECK_THROWS_AS(gen_synthst(spec, 0), InvalidConfigError);
}

TEST_CASE("synthst attribute rate at texture_rho = 1/n") {
    SynthSpec spec;
    spec.n_classes = 4;
    spec.n_per_class = 500;
    spec.texture_rho = 0.25;
    spec.style.img_side = 8;
    const Dataset ds = gen_synthst(spec, 1);
    double match = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) match += ds.attrs[i] == ds.labels[i];
    const double n = static_cast<double>(ds.size());
    const double sigma = std::sqrt(0.25 * 0.75 / n);
    CHECK(std::abs(match / n - 0.25) <= 3 * sigma);
    // Every attribute value shows up for every class.
    const auto table = contingency(ds);
    CHECK(table.size() == 16);
}

TEST_CASE("rerender keeps ids and labels") {
    SynthSpec spec;
    spec.n_per_class = 5;
    spec.style.img_side = 10;
    spec.texture_rho = 0.25;
    const Dataset ds = gen_synthst(spec, 2);
    SynthSpec labeled = spec;
    labeled.texture_rho = 1.0;
    labeled.tint_rho = 1.0;
    const Dataset re = rerender_synthst(ds, labeled, 3);
    CHECK(re.ids == ds.ids);
    CHECK(re.labels == ds.labels);
    CHECK(re.attrs == re.labels);
}

TEST_CASE("skewed builders") {
    const auto mix = celeba_default().test_mix;
    const auto counts = round_mix(mix, 10000);
    CHECK(counts.at({1, 1}) == 1241);
    CHECK(counts.at({1, 0}) == 4892);
    CHECK(counts.at({0, 1}) == 90);
    CHECK(counts.at({0, 0}) == 3777);

    // Remainders go to the largest fractional parts.
    const auto thirds = round_mix({{{0, 0}, 1.0 / 3}, {{0, 1}, 1.0 / 3}, {{1, 0}, 1.0 / 3}}, 10);
    int total = 0;
    for (const auto& [cell, c] : thirds) total += c;
    CHECK(total == 10);

    SkewSpec spec = celeba_default();
    spec.labeled_counts = {{{0, 0}, 5}, {{1, 1}, 5}};
    spec.unlabeled_counts = {{{0, 0}, 3}, {{0, 1}, 3}, {{1, 0}, 3}, {{1, 1}, 3}};
    spec.test_size = 100;
    const CellSource source = [](int cls, int attr, Rng& rng) {
        return Image(2, 2, 1, 0.1 * cls + 0.2 * attr + 0.01 * rng.uniform());
    };
    const SkewedSplits s = build_skewed(source, 2, spec, 4);
    CHECK(contingency(s.labeled) == spec.labeled_counts);
    CHECK(contingency(s.unlabeled) == spec.unlabeled_counts);
    CHECK(contingency(s.test) == round_mix(spec.test_mix, 100));

    const SkewSpec full = celeba_fullskew();
    CHECK(full.unlabeled_counts.at({0, 0}) == 2000);
    CHECK(full.unlabeled_counts.at({1, 1}) == 2000);
    CHECK(celeba_default().unlabeled_counts.at({1, 0}) == 1000);

    // Drawing from a finite pool.
    Dataset pool;
    pool.n_classes = 2;
    for (int k = 0; k < 80; ++k) pool.push_back(Image(1, 1, 1), k % 2, (k / 2) % 2, static_cast<std::uint64_t>(k));
    SkewSpec small;
    small.labeled_counts = {{{0, 0}, 4}, {{1, 1}, 4}};
    small.unlabeled_counts = {{{0, 1}, 6}, {{1, 0}, 6}};
    small.test_mix = {{{0, 0}, 0.5}, {{1, 1}, 0.5}};
    small.test_size = 10;
    const SkewedSplits d = build_skewed(pool, small, 1);
    CHECK(contingency(d.labeled) == small.labeled_counts);
    CHECK(contingency(d.unlabeled) == small.unlabeled_counts);
    std::set<std::uint64_t> used;
    for (const Dataset* part : {&d.labeled, &d.unlabeled, &d.test})
        for (std::uint64_t id : part->ids) CHECK(used.insert(id).second);
    small.unlabeled_counts[{0, 1}] = 50;
    CHECK_THROWS_AS(build_skewed(pool, small, 1), InvalidConfigError);
}

TEST_CASE("pseudo-label pool") {
    PseudoLabelPool pool;
    CHECK(pool_unique_count(pool) == 0);
    const PoolEntry e1a{1, 0, 0, 0.9};
    pool = pool_add(pool, std::vector<PoolEntry>{e1a, e1a});
    CHECK(pool.size() == 2);
    CHECK(pool_unique_count(pool) == 1);

    PseudoLabelPool conflict = pool_add({}, std::vector<PoolEntry>{{1, 0, 0, 0.9}, {1, 1, 1, 0.8}});
    CHECK(conflict.size() == 2);
    CHECK(pool_unique_count(conflict, 0) == 1);
    CHECK(pool_unique_count(conflict, 1) == 1);
    CHECK(pool_unique_count(conflict) == 1);
}

TEST_CASE("raw format round trip and errors") {
    const auto dir = testutil::temp_dir("raw");
    SynthSpec spec;
    spec.n_per_class = 3;
    spec.style.img_side = 9;
    Dataset ds = gen_synthst(spec, 5);
    // Quantize first so the round trip is exact.
    for (Image& img : ds.images)
        for (double& v : img.data) v = std::round(v * 255.0) / 255.0;
    save_raw(ds, dir);
    const Dataset back = load_raw(dir, ds.n_classes);
    CHECK(back.ids == ds.ids);
    CHECK(back.labels == ds.labels);
    CHECK(back.attrs == ds.attrs);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(testutil::max_diff(back.images[i], ds.images[i]) < 1e-12);

    const auto bin = dir / "data.bin";
    std::string bytes;
    {
        std::ifstream in(bin, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write_bin = [&](const std::string& b) {
        std::ofstream out(bin, std::ios::binary | std::ios::trunc);
        out.write(b.data(), static_cast<std::streamsize>(b.size()));
    };

    std::string bad = bytes;
    bad[0] = 'X';
    write_bin(bad);
    try {
        load_raw(dir);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
    }

    write_bin(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_raw(dir), FormatError);

    write_bin(bytes);
    {
        std::ofstream out(dir / "labels.csv", std::ios::app);
        out << "999,0,0\n";
    }
    CHECK_THROWS_AS(load_raw(dir), FormatError);

    save_raw(ds, dir);
    CHECK_THROWS_AS(load_raw(dir, 2), FormatError);  // labels reach 3
    std::filesystem::remove_all(dir);
}
