#pragma once

#include <psrrr/common.hpp>
#include <psrrr/dense_io.hpp>
#include <psrrr/design.hpp>
#include <psrrr/ingest.hpp>
#include <psrrr/model.hpp>
#include <psrrr/parallel.hpp>
#include <psrrr/pathmap.hpp>
#include <psrrr/phenosig.hpp>
#include <psrrr/pipeline.hpp>
#include <psrrr/ranking.hpp>
#include <psrrr/simulate.hpp>
#include <psrrr/solver.hpp>
#include <psrrr/tsv.hpp>
