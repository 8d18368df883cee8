#pragma once

#include "cmoe/autodiff.hpp"
#include "cmoe/params.hpp"
#include "cmoe/rng.hpp"

#include <string>

namespace cmoe {

inline constexpr double kLeakySlope = 0.01;

// Registers `<prefix>.w` (in x out, Glorot-uniform) and, optionally,
// `<prefix>.b` (1 x out, zeros).
void init_affine(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng,
                 bool bias = true);

// x W + b for a batch of row vectors.
ad::Var affine(ParamBinding& p, const std::string& prefix, ad::Var x);

// Inverted dropout with a freshly drawn mask; identity when rng is null or
// rate is zero.
ad::Var dropout(ad::Var x, double rate, Rng* rng);
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

}  // namespace cmoe
