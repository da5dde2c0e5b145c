#pragma once

#include "l1dpf/commands.hpp"
#include "l1dpf/dataio.hpp"
#include "l1dpf/detection.hpp"
#include "l1dpf/errors.hpp"
#include "l1dpf/eval.hpp"
#include "l1dpf/geometry.hpp"
#include "l1dpf/imaging.hpp"
#include "l1dpf/quad.hpp"
#include "l1dpf/rng.hpp"
#include "l1dpf/sparse.hpp"
#include "l1dpf/tracker.hpp"
