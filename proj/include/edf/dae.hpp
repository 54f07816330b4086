#pragma once

#include "edf/cam.hpp"

namespace edf::dae {

/// Per-pixel gradient weights: 1 where the map is below its image mean,
/// beta + M where it is at or above. Degenerate maps get all-ones weights.
Tensor weights_from_map(const cam::ActivationMapSet& maps, double beta);

/// grad[i,c,h,w] * weights[i,h,w].
Tensor rescale_gradients(const Tensor& grad, const Tensor& weights);

/// True when the maps must be recomputed before iteration `iteration`.
bool refresh_due(long iteration, long period);

}  // namespace edf::dae
