#pragma once

#include "nisim/error.hpp"
#include "nisim/gausscore.hpp"
#include "nisim/parallel.hpp"
#include "nisim/stability.hpp"
#include "nisim/netsearch.hpp"
#include "nisim/discrete.hpp"
#include "nisim/variational.hpp"
#include "nisim/serialization.hpp"
