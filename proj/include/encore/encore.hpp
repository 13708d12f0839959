#pragma once

// Umbrella header for the whole library.

#include "encore/archive.hpp"
#include "encore/audit.hpp"
#include "encore/augment.hpp"
#include "encore/blas.hpp"
#include "encore/checkpoint.hpp"
#include "encore/config.hpp"
#include "encore/conv.hpp"
#include "encore/data.hpp"
#include "encore/encoder.hpp"
#include "encore/graph.hpp"
#include "encore/heads.hpp"
#include "encore/image.hpp"
#include "encore/losses.hpp"
#include "encore/ops.hpp"
#include "encore/optim.hpp"
#include "encore/rng.hpp"
#include "encore/tensor.hpp"
#include "encore/trainer.hpp"
#include "encore/transfer.hpp"
