#pragma once

#include "test_support.hpp"

#include <doctest.h>
