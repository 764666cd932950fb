#pragma once

#include "tipguard/bohb/schedule.hpp"
#include "tipguard/bohb/search.hpp"
#include "tipguard/bohb/space.hpp"
#include "tipguard/bohb/tpe.hpp"
