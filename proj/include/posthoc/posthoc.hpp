#ifndef POSTHOC_POSTHOC_HPP
#define POSTHOC_POSTHOC_HPP

#include "posthoc/clusters.hpp"
#include "posthoc/data_model.hpp"
#include "posthoc/distributions.hpp"
#include "posthoc/error.hpp"
#include "posthoc/phdat.hpp"
#include "posthoc/philox.hpp"
#include "posthoc/pipeline.hpp"
#include "posthoc/report.hpp"
#include "posthoc/simulate.hpp"
#include "posthoc/stats.hpp"
#include "posthoc/tdp.hpp"
#include "posthoc/template_io.hpp"
#include "posthoc/templates.hpp"

#endif
