#pragma once

#include "hiercast/diagnostics.hpp"
#include "hiercast/errors.hpp"
#include "hiercast/eval.hpp"
#include "hiercast/hier.hpp"
#include "hiercast/ingest.hpp"
#include "hiercast/localfit.hpp"
#include "hiercast/records.hpp"
#include "hiercast/synthgen.hpp"
#include "hiercast/pipeline.hpp"
