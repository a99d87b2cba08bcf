#ifndef GPOABC_GPOABC_HPP
#define GPOABC_GPOABC_HPP

#include "errors.hpp"
#include "rng.hpp"
#include "special.hpp"
#include "models.hpp"
#include "smc.hpp"
#include "optim.hpp"
#include "parallel.hpp"
#include "gp.hpp"
#include "gpo.hpp"
#include "baselines.hpp"
#include "copula.hpp"
#include "io.hpp"
#include "pipeline.hpp"
#include "config.hpp"
#include "app.hpp"

#endif
