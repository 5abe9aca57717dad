#include "cotrainlab/priors.hpp"

#include <algorithm>

#include "cotrainlab/error.hpp"
#include "cotrainlab/parallel.hpp"

namespace cotrainlab::priors {

std::string to_string(Prior p) {
    switch (p) {
        case Prior::Standard: return "standard";
        case Prior::Sobel: return "sobel";
        case Prior::Canny: return "canny";
        case Prior::Patch: return "patch";
    }
    return "?";
}

Prior prior_from_string(const std::string& name) {
    if (name == "standard") return Prior::Standard;
    if (name == "sobel") return Prior::Sobel;
    if (name == "canny") return Prior::Canny;
    if (name == "patch") return Prior::Patch;
    throw InvalidConfigError("unknown prior '" + name + "'");
}

bool centered(Prior prior) noexcept { return prior == Prior::Standard || prior == Prior::Patch; }

Image transform(Prior prior, const Image& img, const imagefx::EdgeParams& edges) {
    switch (prior) {
        case Prior::Sobel: return imagefx::sobel_edges(img, edges);
        case Prior::Canny: return imagefx::canny_edges(img, edges);
        case Prior::Standard:
        case Prior::Patch: return img;
    }
    return img;
}

learners::InputShape feature_shape(Prior prior, const Image& sample, const imagefx::EdgeParams& edges) {
    switch (prior) {
        case Prior::Sobel: return {edges.upsample_side, edges.upsample_side, 1};
        case Prior::Canny: return {sample.height, sample.width, 1};
        case Prior::Standard:
        case Prior::Patch: return {sample.height, sample.width, sample.channels};
    }
    return {};
}

Matrix features(Prior prior, const data::Dataset& ds, const imagefx::EdgeParams& edges, int threads) {
    if (ds.size() == 0) return {};
    const auto shape = feature_shape(prior, ds.images[0], edges);
    Matrix out(ds.size(), shape.size());
    parallel_for(ds.size(), threads, [&](std::size_t i) {
        const Image t = transform(prior, ds.images[i], edges);
        if (t.size() != shape.size()) throw InvalidInputError("features: mixed image shapes in dataset");
        auto row = out.row(i);
        if (centered(prior)) {
            std::transform(t.data.begin(), t.data.end(), row.begin(), [](double v) { return 2.0 * v - 1.0; });
        } else {
            std::copy(t.data.begin(), t.data.end(), row.begin());
        }
    });
    return out;
}

engine::ViewData build_view(Prior prior, const imagefx::EdgeParams& edges, const data::Dataset& labeled,
                            const data::Dataset& unlabeled, const data::Dataset& validation,
                            const data::Dataset& test, int threads) {
    if (labeled.size() == 0) throw InvalidInputError("build_view: labeled split is empty");
    engine::ViewData v;
    v.shape = feature_shape(prior, labeled.images[0], edges);
    v.labeled = features(prior, labeled, edges, threads);
    v.unlabeled = features(prior, unlabeled, edges, threads);
    v.validation = features(prior, validation, edges, threads);
    v.test = features(prior, test, edges, threads);
    return v;
}

engine::Task build_task(const data::Dataset& labeled, const data::Dataset& unlabeled,
                        const data::Dataset& validation, const data::Dataset& test) {
    engine::Task t;
    t.n_classes = labeled.n_classes;
    t.labeled_labels = labeled.labels;
    t.unlabeled_ids = unlabeled.ids;
    t.validation_labels = validation.labels;
    t.test_labels = test.labels;
    return t;
}

}  // namespace cotrainlab::priors
