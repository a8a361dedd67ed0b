#pragma once

#include "sdissect/bms.hpp"
#include "sdissect/dataset.hpp"
#include "sdissect/decoder.hpp"
#include "sdissect/diagnostics.hpp"
#include "sdissect/dissection.hpp"
#include "sdissect/error.hpp"
#include "sdissect/metrics.hpp"
#include "sdissect/npy.hpp"
#include "sdissect/png_io.hpp"
#include "sdissect/relation.hpp"
#include "sdissect/report.hpp"
#include "sdissect/stimgen.hpp"
#include "sdissect/types.hpp"
