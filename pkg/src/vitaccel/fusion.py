"""Depth-first pairing of inverted-bottleneck projections.

An inverted bottleneck expands the channel count (typically 4x) with one
pointwise layer, applies an activation, and projects back down with a
second pointwise layer.  Run layer by layer, the expanded intermediate is
usually too large to keep on chip and makes a full round trip to DRAM.
Because the consumer is pointwise, any (pixel, channel) tile of the
intermediate can be consumed immediately after production: the project
layer accumulates 32-bit partial outputs across channel tiles and
requantizes once at the end.  The tensor then never touches DRAM.

The planner tiles the intermediate along the pixel columns (X) and the
channel axis (C), searching all divisor pairs for the smallest access
energy whose buffer fits the budget.  Shrinking X costs weight re-staging
per pixel tile; shrinking C costs an extra partial-sum revisit of every
output element, which is why plans prefer giving up X first.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

from .arch import ArchConfig
from .cost_model import evaluate_network
from .workload import KIND_PW, POST_ACT, LayerSpec, NetworkGraph

__all__ = [
    "InvertedBottleneck", "FusionPlan", "ib_from_graph", "plan_fusion",
    "plan_network", "network_fusion_analysis",
]

# The fused tile buffer lives in the scratchpad working region that the
# residency planner already keeps clear of pinned activations.
DEFAULT_FUSION_BUDGET = 64 * 1024

# Entries of the output register file kept free for the producer's own
# in-flight partial sums (one full array wave).
_PRODUCER_ORF_RESERVE = 256


@dataclass(frozen=True)
class InvertedBottleneck:
    """A PW(expand) -> activation -> PW(project) pair and its intermediate."""

    pair_id: str
    expand: LayerSpec
    project: LayerSpec

    def __post_init__(self) -> None:
        if self.expand.kind != KIND_PW or self.project.kind != KIND_PW:
            raise ValueError(f"{self.pair_id}: both halves must be pointwise")
        if self.expand.dims.k != self.project.dims.c:
            raise ValueError(f"{self.pair_id}: expand width "
                             f"{self.expand.dims.k} does not feed project "
                             f"reduction {self.project.dims.c}")
        if (self.expand.dims.ox, self.expand.dims.oy) != \
                (self.project.dims.ox, self.project.dims.oy):
            raise ValueError(f"{self.pair_id}: spatial extents differ")
        if not self.expand.has_post(POST_ACT):
            raise ValueError(f"{self.pair_id}: expand half carries no "
                             "activation")

    @property
    def activation(self) -> str:
        return self.expand.get_post(POST_ACT).params[0]

    @property
    def shape(self) -> Tuple[int, int, int]:
        """(X, Y, C) of the intermediate tensor."""
        d = self.expand.dims
        return (d.ox, d.oy, d.k)

    @property
    def intermediate_elements(self) -> int:
        x, y, c = self.shape
        return self.expand.dims.b * x * y * c

    @property
    def intermediate_bytes(self) -> int:
        # Expand requantizes on write-back, so the intermediate is int8.
        return self.intermediate_elements * (self.expand.out_bits() // 8)


@dataclass
class FusionPlan:
    """Tile sizes and production/consumption schedule for one pair.

    ``tile_x`` counts pixel columns, ``tile_c`` intermediate channels; a
    tile is (tile_x * Y * tile_c) bytes.  Infeasible plans (nothing fits
    the budget) keep ``feasible=False`` and the caller runs the pair
    unfused.
    """

    pair: InvertedBottleneck
    feasible: bool
    tile_x: int = 0
    tile_c: int = 0
    peak_buffer_bytes: int = 0
    dram_bytes_saved: int = 0
    reason: str = ""

    def schedule(self) -> List[Dict[str, object]]:
        """Ordered produce/consume steps with buffer occupancy attached.

        Pixel tiles are outer so each output stripe accumulates over all
        channel tiles and is requantized and drained exactly once.
        """
        if not self.feasible:
            return []
        x, y, c = self.pair.shape
        tile_bytes = self.tile_x * y * self.tile_c
        steps: List[Dict[str, object]] = []
        occupancy = 0
        for xi in range(x // self.tile_x):
            for ci in range(c // self.tile_c):
                occupancy += tile_bytes
                steps.append({"step": "produce", "x": xi, "c": ci,
                              "buffer_bytes": occupancy})
                occupancy -= tile_bytes
                steps.append({"step": "consume", "x": xi, "c": ci,
                              "buffer_bytes": occupancy})
            steps.append({"step": "drain_output", "x": xi,
                          "buffer_bytes": occupancy})
        return steps

    def encode(self) -> str:
        if not self.feasible:
            return f"{self.pair.pair_id}:unfused"
        return (f"{self.pair.pair_id}:tileX{self.tile_x}:tileC{self.tile_c}"
                f":buf{self.peak_buffer_bytes}")


def ib_from_graph(graph: NetworkGraph) -> Dict[str, InvertedBottleneck]:
    """All tagged inverted-bottleneck pairs of a network."""
    out = {}
    for pair_id, roles in graph.ib_pairs().items():
        out[pair_id] = InvertedBottleneck(pair_id, roles["expand"],
                                          roles["project"])
    return out


def plan_fusion(ib: InvertedBottleneck, arch: ArchConfig,
                sram_budget: int = DEFAULT_FUSION_BUDGET) -> FusionPlan:
    """Exhaustive divisor-pair tile search for one pair.

    A candidate is legal when the intermediate tile fits the buffer
    budget and the project's 32-bit partial-output stripe fits the output
    register file (minus a working wave for the producer); partials are
    never spilled mid-accumulation.  Among legal candidates the smallest
    modeled access energy wins; ties prefer whole channels (shrink X
    before C).
    """
    if sram_budget <= 0:
        raise ValueError("fusion buffer budget must be positive")
    x, y, c = ib.shape
    out_ch = ib.project.dims.k
    out_elems = ib.project.out_elements()
    t_bytes = ib.intermediate_bytes
    w_bytes = ib.expand.weight_bytes() + ib.project.weight_bytes()
    e = arch.energy
    orf_cap = arch.output_rf_entries - _PRODUCER_ORF_RESERVE

    best = None
    for tile_x in _divisors(x):
        if tile_x * y * out_ch > orf_cap:
            continue
        for tile_c in _divisors(c):
            tile_bytes = tile_x * y * tile_c
            if tile_bytes > sram_budget:
                continue
            n_x = x // tile_x
            n_c = c // tile_c
            # Buffer round trip is tiling-invariant; what moves is weight
            # re-staging per pixel tile and one partial-sum revisit of
            # every output element per channel tile.
            energy = (e.sram_pj * (2 * t_bytes + w_bytes * n_x)
                      + e.output_rf_pj * 4 * out_elems * (n_c + 1))
            key = (energy, n_c, n_x)
            if best is None or key < best[0]:
                best = (key, tile_x, tile_c, tile_bytes)

    if best is None:
        return FusionPlan(ib, feasible=False,
                          reason="no tile fits the buffer budget and "
                                 "output register file")
    _, tile_x, tile_c, tile_bytes = best
    return FusionPlan(ib, feasible=True, tile_x=tile_x, tile_c=tile_c,
                      peak_buffer_bytes=tile_bytes,
                      dram_bytes_saved=2 * t_bytes)


def plan_network(graph: NetworkGraph, arch: ArchConfig,
                 sram_budget: int = DEFAULT_FUSION_BUDGET
                 ) -> Dict[str, FusionPlan]:
    return {pair_id: plan_fusion(ib, arch, sram_budget)
            for pair_id, ib in ib_from_graph(graph).items()}


def network_fusion_analysis(graph: NetworkGraph, arch: ArchConfig,
                            policy: str = "reconfigurable",
                            sram_budget: int = DEFAULT_FUSION_BUDGET
                            ) -> Dict[str, object]:
    """Network-level effect of fusing every feasible pair.

    Returns per-pair rows plus the aggregate DRAM and energy comparison
    between the unfused and fused schedules, and the share of unfused
    DRAM traffic attributable to intermediate round trips.
    """
    plans = plan_network(graph, arch, sram_budget)
    base = evaluate_network(graph, arch, policy)
    fused = evaluate_network(graph, arch, policy, fusion_plans=plans)

    rows = []
    for pair_id in sorted(plans):
        plan = plans[pair_id]
        ib = plan.pair
        rows.append({
            "pair": pair_id,
            "intermediate_bytes": ib.intermediate_bytes,
            "unfused_dram_bytes": 2 * ib.intermediate_bytes,
            "fused_dram_bytes": 0 if plan.feasible
                                else 2 * ib.intermediate_bytes,
            "feasible": plan.feasible,
            "plan": plan.encode(),
        })

    ib_dram = base.dram_by_class["ib_intermediate"]
    return {
        "pairs": rows,
        "feasible_pairs": sum(r["feasible"] for r in rows),
        "ib_share_of_dram": ib_dram / base.dram_bytes,
        "dram_bytes_unfused": base.dram_bytes,
        "dram_bytes_fused": fused.dram_bytes,
        "energy_pj_unfused": base.total_energy_pj,
        "energy_pj_fused": fused.total_energy_pj,
        "energy_reduction": 1.0 - fused.total_energy_pj / base.total_energy_pj,
        "dram_pj_per_byte": arch.energy.dram_pj,
    }


def _divisors(n: int) -> List[int]:
    return [d for d in range(1, n + 1) if n % d == 0]
