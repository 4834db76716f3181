"""
From road network to feasibility graph
======================================

Generate a synthetic road network, compute the charger-to-charger graph of
time-optimal legs that fit in one battery window, and attach a trip.
"""

import tempfile
from pathlib import Path

from evcmab.experiment import GeneratorSpec, generate_instance
from evcmab.feasibility import build_feasibility_graph, connect_terminals, usable_window
from evcmab.road_graph import RoadEdge, VehicleParams, edge_energy, load_instance

truck = VehicleParams()
print("1 km at 20 m/s costs %.1f Wh" % (edge_energy(RoadEdge(0, 1, 1000.0, 20.0), truck) / 3600))
print("usable window       %.1f kWh" % (usable_window(truck) / 3.6e6))

# %%
tmp = Path(tempfile.mkdtemp())
generate_instance(GeneratorSpec(), tmp / "nodes.csv", tmp / "edges.csv")
road = load_instance(tmp / "nodes.csv", tmp / "edges.csv")
print("\nroad graph          %d nodes, %d directed edges, %d chargers"
      % (len(road.nodes), len(road.edges), len(road.stations)))

# %%
fg = build_feasibility_graph(road, truck)
print("feasibility graph   %d legs, out-degree %.1f, leg energy up to %.0f%% of the window"
      % (len(fg.edges), len(fg.edges) / len(fg.stations),
         100 * max(e.path_energy_Ws for e in fg.edges) / fg.usable_window_Ws))

# %%
# The trip runs corner to corner.  The source starts full, so it only gets
# outgoing legs; nothing is charged on arrival at the target.
trip = connect_terminals(fg, road, 0, 1, truck)
print("trip graph          %d legs leave the source, %d reach the target"
      % (len(trip.adjacency[0]), sum(e.target == 1 for e in trip.edges)))
