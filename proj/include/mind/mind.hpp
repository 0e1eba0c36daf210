#pragma once

// Umbrella header: unsupervised image matching by inverting a
// frame-interpolation network.

#include "mind/checkpoint.hpp"
#include "mind/config_file.hpp"
#include "mind/error.hpp"
#include "mind/flow_io.hpp"
#include "mind/gradcheck.hpp"
#include "mind/image_io.hpp"
#include "mind/layers.hpp"
#include "mind/matcher.hpp"
#include "mind/metrics.hpp"
#include "mind/net.hpp"
#include "mind/rng.hpp"
#include "mind/synth.hpp"
#include "mind/tensor.hpp"
#include "mind/trainer.hpp"
