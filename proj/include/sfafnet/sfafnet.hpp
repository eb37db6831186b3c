#pragma once

#include "sfafnet/checkpoint.hpp"
#include "sfafnet/data.hpp"
#include "sfafnet/fdgm.hpp"
#include "sfafnet/fft.hpp"
#include "sfafnet/gfm.hpp"
#include "sfafnet/gradcheck.hpp"
#include "sfafnet/image.hpp"
#include "sfafnet/losses.hpp"
#include "sfafnet/metrics.hpp"
#include "sfafnet/network.hpp"
#include "sfafnet/trainer.hpp"
