"""Expected values for the threat-assessment running example."""
from mebnlearn import data_path

THREAT_SMALL = str(data_path("threat_small", "manifest.txt"))
THREAT_FULL = str(data_path("threat_full", "manifest.txt"))
VEHICLE_TRACKING = str(data_path("vehicle_tracking", "manifest.txt"))
MEET_COMMUNICATE = str(data_path("meet_communicate", "manifest.txt"))
SCRIPTS = data_path("scripts")


def rules_text(name: str) -> str:
    return data_path(name).read_text(encoding="utf-8")


# normalized layout: relation -> (attribute names, primary key, rows)
NORMALIZED_SMALL = {
    "Time": (("TID",), ("TID",), {("t1",), ("t2",), ("t3",)}),
    "Region": (("RID",), ("RID",), {("rgn1",), ("rgn2",)}),
    "Vehicle": (("VID", "VehicleType"), ("VID",), {("v1", "Wheeled"), ("v2", "Tracked")}),
    "Location": (("v", "t", "Location"), ("v", "t"), {("v1", "t1", "rgn1"), ("v1", "t2", "rgn1")}),
    "Situation": (("rgn", "t", "ThreatLevel"), ("rgn", "t"), {("rgn1", "t1", "High"), ("rgn2", "t3", "Low")}),
}

# Joined dataset for ThreatLevel <- VehicleType, numbered as printed:
# case -> (VehicleType, vehicle, time, region, ThreatLevel)
JOINED_ROWS = {
    1: ("Tracked", "Vehicle13", "Time18", "Region6", "High"),
    2: ("Tracked", "Vehicle15", "Time21", "Region7", "High"),
    3: ("Tracked", "Vehicle17", "Time24", "Region8", "Low"),
    4: ("Tracked", "Vehicle19", "Time27", "Region9", "High"),
    5: ("Wheeled", "Vehicle21", "Time30", "Region10", "High"),
    6: ("Wheeled", "Vehicle23", "Time33", "Region11", "Low"),
    7: ("Wheeled", "Vehicle0", "Time2", "Region0", "High"),
    8: ("Tracked", "Vehicle1", "Time2", "Region0", "High"),
    9: ("Tracked", "Vehicle2", "Time5", "Region1", "Low"),
    10: ("Wheeled", "Vehicle3", "Time5", "Region1", "Low"),
    11: ("Tracked", "Vehicle4", "Time8", "Region2", "High"),
    12: ("Tracked", "Vehicle5", "Time8", "Region2", "High"),
    13: ("Tracked", "Vehicle6", "Time11", "Region3", "Low"),
    14: ("Tracked", "Vehicle7", "Time11", "Region3", "Low"),
    15: ("Tracked", "Vehicle8", "Time14", "Region4", "High"),
    16: ("Tracked", "Vehicle9", "Time14", "Region4", "High"),
    17: ("Wheeled", "Vehicle10", "Time17", "Region5", "High"),
    18: ("Wheeled", "Vehicle11", "Time17", "Region5", "High"),
}
TRACKED_CASES = {1, 2, 3, 4, 8, 9, 11, 12, 13, 14, 15, 16}
WHEELED_CASES = {5, 6, 7, 10, 17, 18}

# Situation MFrag while the rule is being applied, context order as printed
SITUATION_WITH_CONTEXTS = """
[F: SITUATION
  [C: IsA (rgn, REGION), IsA (t, TIME)]
  [C: IsA (VID, VEHICLE)]
  [C: IsA (v, VEHICLE), IsA (t1, TIME)]
  [C: rgn = Location (v, t1)]
  [C: t = t1]
  [C: VID = v]
  [R: ThreatLevel (rgn, t)
    [IP: VehicleType (VID)]
  ]
]
"""
SITUATION_REFINED = """
[F: SITUATION
  [C: IsA (v, VEHICLE)]
  [C: IsA (t, TIME), IsA (rgn, REGION)]
  [C: rgn = Location (v, t)]
  [R: ThreatLevel (rgn, t)
    [IP: VehicleType (v)]
  ]
]
"""

# closed-world completion of the pair relations over v1..v4
COMMUNICATE_COMPLETED = {("v1", "v2"): True, ("v2", "v3"): True, ("v3", "v4"): True,
                         ("v1", "v3"): False, ("v1", "v4"): False, ("v2", "v4"): False}
MEET_COMPLETED = {("v1", "v2"): True, ("v1", "v4"): True, ("v2", "v3"): True,
                  ("v1", "v3"): False, ("v2", "v4"): False, ("v3", "v4"): False}
