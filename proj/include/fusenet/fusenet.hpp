#pragma once

#include "fusenet/numerics.hpp"
#include "fusenet/network.hpp"
#include "fusenet/fusion.hpp"
#include "fusenet/joint_trainer.hpp"
#include "fusenet/convex_mtl.hpp"
#include "fusenet/sharing_graph.hpp"
#include "fusenet/synthetic.hpp"
#include "fusenet/data_io.hpp"
#include "fusenet/experiment.hpp"
