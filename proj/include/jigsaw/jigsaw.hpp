#pragma once

#include "jigsaw/changemap.hpp"
#include "jigsaw/class_scheme.hpp"
#include "jigsaw/dataset.hpp"
#include "jigsaw/error.hpp"
#include "jigsaw/gradcheck.hpp"
#include "jigsaw/jigsaw_model.hpp"
#include "jigsaw/random.hpp"
#include "jigsaw/raster_io.hpp"
#include "jigsaw/spectral_indices.hpp"
#include "jigsaw/synthetic.hpp"
#include "jigsaw/tensor_nn.hpp"
#include "jigsaw/trainer.hpp"
