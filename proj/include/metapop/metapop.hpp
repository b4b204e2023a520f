#pragma once

#include "metapop/disperser.hpp"
#include "metapop/envdyn.hpp"
#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/gwsim.hpp"
#include "metapop/ldp.hpp"
#include "metapop/linalg.hpp"
#include "metapop/motifs.hpp"
#include "metapop/parallel.hpp"
#include "metapop/rng.hpp"
#include "metapop/spectral.hpp"
