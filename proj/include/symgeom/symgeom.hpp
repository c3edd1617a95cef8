#pragma once

#include "symgeom/corpus_stats.hpp"
#include "symgeom/io.hpp"
#include "symgeom/kernel_fit.hpp"
#include "symgeom/latent_model.hpp"
#include "symgeom/lattice_theory.hpp"
#include "symgeom/matrix_builder.hpp"
#include "symgeom/pipeline.hpp"
#include "symgeom/probe_decoder.hpp"
#include "symgeom/spectral_embed.hpp"
