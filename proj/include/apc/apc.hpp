#pragma once

#include "apc/error.hpp"
#include "apc/predicate.hpp"
#include "apc/network.hpp"
#include "apc/atoms.hpp"
#include "apc/ap_tree.hpp"
#include "apc/rewrite.hpp"
#include "apc/behavior.hpp"
#include "apc/label_plane.hpp"
#include "apc/updates.hpp"
#include "apc/workload.hpp"
