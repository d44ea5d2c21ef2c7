#pragma once

#include "hypopath/density.hpp"
#include "hypopath/fbm.hpp"
#include "hypopath/fractional.hpp"
#include "hypopath/io.hpp"
#include "hypopath/join.hpp"
#include "hypopath/lyndon.hpp"
#include "hypopath/numerics.hpp"
#include "hypopath/parallel.hpp"
#include "hypopath/path.hpp"
#include "hypopath/poly.hpp"
#include "hypopath/rng.hpp"
#include "hypopath/tensor.hpp"
#include "hypopath/version.hpp"
#include "hypopath/vfield.hpp"
