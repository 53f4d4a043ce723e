#pragma once

#include "fqif/funcdata.hpp"
#include "fqif/kernelsmooth.hpp"
#include "fqif/fpca.hpp"
#include "fqif/scores.hpp"
#include "fqif/qif.hpp"
#include "fqif/inference.hpp"
#include "fqif/simgen.hpp"
#include "fqif/harness.hpp"
