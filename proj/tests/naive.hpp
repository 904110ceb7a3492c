// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef FLOWVOC_TESTS_NAIVE_HPP_
#define FLOWVOC_TESTS_NAIVE_HPP_

#include "flowvoc/reference.hpp"

namespace naive = flowvoc::reference;

#endif  // FLOWVOC_TESTS_NAIVE_HPP_
