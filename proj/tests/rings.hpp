#pragma once

#include <numbers>

#include "mad/lattice.hpp"

namespace rings {

using namespace mad;

// 25-cell FODO ring; quad strengths read kqf/kqd from env. With nonlinear
// set, each cell also carries two sextupoles (ksf, ksd) and an octupole (koc).
// Without bends the dipoles are field-free straight sections.
inline SequencePtr fodo(Env& env, int nc = 25, bool nonlinear = false, bool bends = true) {
  if (!env.defined_here("kqf")) env.set("kqf", 0.29601);
  if (!env.defined_here("kqd")) env.set("kqd", -0.30242);
  auto mb = Element::make("sbend", "mb", {{"l", 2}, {"angle", bends ? std::numbers::pi / nc : 0.0}});
  auto mq = Element::make("quadrupole", "mq", {{"l", 1}});
  mq->env = &env;
  auto qf = mq->clone("qf", {{"at", 0}});
  qf->set("k1", Expr::var("kqf"), true);
  auto qd = mq->clone("qd", {{"at", 5}});
  qd->set("k1", Expr::var("kqd"), true);
  std::vector<BLine::Item> items{{qf}, {mb->clone("mb1", {{"at", 2}})}, {qd}, {mb->clone("mb2", {{"at", 7}})}};
  if (nonlinear) {
    if (!env.defined_here("ksf")) env.set("ksf", 0.6);
    if (!env.defined_here("ksd")) env.set("ksd", -0.9);
    if (!env.defined_here("koc")) env.set("koc", 8.0);
    auto ms = Element::make("sextupole", "ms", {{"l", 0.3}});
    ms->env = &env;
    auto sf = ms->clone("sf", {{"at", 1.2}});
    sf->set("k2", Expr::var("ksf"), true);
    auto sd = ms->clone("sd", {{"at", 6.2}});
    sd->set("k2", Expr::var("ksd"), true);
    auto oc = Element::make("octupole", "oc", {{"l", 0.3}, {"at", 4.3}});
    oc->env = &env;
    oc->set("k3", Expr::var("koc"), true);
    items = {{qf}, {sf}, {mb->clone("mb1", {{"at", 2}})}, {oc}, {qd}, {sd}, {mb->clone("mb2", {{"at", 7}})}};
  }
  auto cell = BLine::make("cell", items);
  auto ring = BLine::make("ring", {{cell, nc}});
  auto seq = build_sequence("ring", *ring, Refer::entry);
  seq->beam = std::make_shared<Beam>();
  return seq;
}

}  // namespace rings
