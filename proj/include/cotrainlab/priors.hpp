#pragma once

#include <string>

#include "cotrainlab/data.hpp"
#include "cotrainlab/engine.hpp"
#include "cotrainlab/imagefx.hpp"
#include "cotrainlab/matrix.hpp"

// Feature priors as input pipelines. Standard and Patch consume raw RGB (the
// Patch prior lives in the learner's limited receptive field); Sobel and
// Canny consume single-channel edge maps. Raw RGB features are centered to
// [-1, 1]; edge maps stay in [0, 1] so empty regions remain exact zeros.
namespace cotrainlab::priors {

enum class Prior { Standard, Sobel, Canny, Patch };

std::string to_string(Prior p);
Prior prior_from_string(const std::string& name);

bool centered(Prior prior) noexcept;

Image transform(Prior prior, const Image& img, const imagefx::EdgeParams& edges);

learners::InputShape feature_shape(Prior prior, const Image& sample, const imagefx::EdgeParams& edges);

// One row per example: the flattened transformed image, centered when
// centered(prior).
Matrix features(Prior prior, const data::Dataset& ds, const imagefx::EdgeParams& edges, int threads = 1);

engine::ViewData build_view(Prior prior, const imagefx::EdgeParams& edges, const data::Dataset& labeled,
                            const data::Dataset& unlabeled, const data::Dataset& validation,
                            const data::Dataset& test, int threads = 1);

engine::Task build_task(const data::Dataset& labeled, const data::Dataset& unlabeled,
                        const data::Dataset& validation, const data::Dataset& test);

}  // namespace cotrainlab::priors
