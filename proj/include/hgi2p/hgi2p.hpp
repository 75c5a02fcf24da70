#pragma once

#include "hgi2p/autodiff.hpp"
#include "hgi2p/error.hpp"
#include "hgi2p/geometry.hpp"
#include "hgi2p/headapting.hpp"
#include "hgi2p/hetgraph.hpp"
#include "hgi2p/matchprune.hpp"
#include "hgi2p/model.hpp"
#include "hgi2p/model_io.hpp"
#include "hgi2p/mpmining.hpp"
#include "hgi2p/pipeline.hpp"
#include "hgi2p/random.hpp"
#include "hgi2p/regions.hpp"
#include "hgi2p/report.hpp"
#include "hgi2p/scene.hpp"
#include "hgi2p/scene_io.hpp"
#include "hgi2p/synthbench.hpp"
#include "hgi2p/training.hpp"
