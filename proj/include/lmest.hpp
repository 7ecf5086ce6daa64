#pragma once

#include "lmest/em.hpp"
#include "lmest/error.hpp"
#include "lmest/io.hpp"
#include "lmest/mlogit.hpp"
#include "lmest/model.hpp"
#include "lmest/parallel.hpp"
#include "lmest/report.hpp"
#include "lmest/simulate.hpp"
#include "lmest/threestep.hpp"
#include "lmest/types.hpp"
