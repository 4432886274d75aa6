#!/usr/bin/env python3
"""Generate the synthetic "minicity" fixture (GTFS feed + OSM extract + configs).

Output goes to crates/tsim/tests/fixtures/minicity/. The files are committed;
rerun only when the fixture layout itself changes, then rerun
scripts/count_minicity.py to refresh the manifest.
"""
import math
import os
import random
import zipfile

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "tsim", "tests", "fixtures", "minicity")
R = 6371008.8
LAT0, LON0 = 47.660, 9.170
ROWS = COLS = 20
SPACING = 100.0


def to_latlon(x, y):
    lat = LAT0 + math.degrees(y / R)
    lon = LON0 + math.degrees(x / (R * math.cos(math.radians(LAT0))))
    return round(lat, 7), round(lon, 7)


def node_id(r, c):
    return 1 + r * COLS + c


def hms(t):
    return "%02d:%02d:%02d" % (t // 3600, (t // 60) % 60, t % 60)


def write_gtfs():
    stops = []
    # Line 1 runs west-east along row 5, stops on even columns, 8 m north of the street.
    for i, c in enumerate(range(0, 20, 2)):
        lat, lon = to_latlon(c * SPACING, 5 * SPACING + 8.0)
        stops.append(("S%02d" % (i + 1), "Row5 Col%d" % c, lat, lon))
    # Line 2 runs south-north along column 12, stops on odd rows, 8 m east.
    for i, r in enumerate(range(1, 20, 2)):
        lat, lon = to_latlon(12 * SPACING + 8.0, r * SPACING)
        stops.append(("S%02d" % (i + 11), "Col12 Row%d" % r, lat, lon))

    l1 = ["S%02d" % i for i in range(1, 11)]
    l2 = ["S%02d" % i for i in range(11, 21)]
    starts = ["05:30", "06:00", "06:20", "06:40", "07:00", "07:20", "07:40", "08:00",
              "08:30", "09:00", "10:00", "11:00", "12:00", "13:00", "14:00", "15:00",
              "16:00", "16:30", "17:00", "17:30", "18:00", "19:00", "21:00", "23:30"]
    starts = [int(s[:2]) * 3600 + int(s[3:]) * 60 for s in starts]

    trips = []
    stop_times = []
    for line, pattern, offset in (("L1", l1, 0), ("L2", l2, 25 * 60)):
        for direction in (0, 1):
            seq = pattern if direction == 0 else list(reversed(pattern))
            for s in starts:
                t0 = s + offset + direction * 10 * 60
                trip_id = "%s-%d-%s" % (line, direction, hms(t0)[:5].replace(":", ""))
                trips.append((line, "ALL", trip_id, direction))
                t = t0
                for k, stop in enumerate(seq):
                    dwell = 30 if stop in ("S07", "S13") else 0
                    arr = t
                    dep = t + dwell
                    stop_times.append((trip_id, hms(arr), hms(dep), stop, k + 1))
                    t = dep + 60

    files = {}
    files["agency.txt"] = "agency_id,agency_name,agency_url,agency_timezone\nMC,Minicity Transit,https://example.invalid,Europe/Berlin\n"
    files["stops.txt"] = "stop_id,stop_name,stop_lat,stop_lon\n" + "".join(
        "%s,%s,%.7f,%.7f\n" % s for s in stops)
    files["routes.txt"] = ("route_id,agency_id,route_short_name,route_long_name,route_type\n"
                           "L1,MC,1,\"Line 1, east-west\",3\nL2,MC,2,\"Line 2, south-north\",3\n")
    files["trips.txt"] = "route_id,service_id,trip_id,direction_id\n" + "".join(
        "%s,%s,%s,%d\n" % t for t in trips)
    files["stop_times.txt"] = "trip_id,arrival_time,departure_time,stop_id,stop_sequence\n" + "".join(
        "%s,%s,%s,%s,%d\n" % st for st in stop_times)
    files["calendar.txt"] = ("service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\n"
                             "ALL,1,1,1,1,1,1,1,20260101,20261231\n")
    files["calendar_dates.txt"] = "service_id,date,exception_type\nALL,20260101,2\n"

    os.makedirs(os.path.join(OUT, "gtfs"), exist_ok=True)
    for name, body in files.items():
        with open(os.path.join(OUT, "gtfs", name), "w", newline="") as f:
            f.write(body)
    with zipfile.ZipFile(os.path.join(OUT, "minicity_gtfs.zip"), "w", zipfile.ZIP_DEFLATED) as z:
        for name in sorted(files):
            info = zipfile.ZipInfo(name, date_time=(2026, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            z.writestr(info, files[name])


def write_osm():
    rng = random.Random(42)
    nodes = []  # (id, lat, lon, tags)
    ways = []   # (id, [node ids], tags)
    relations = []  # (id, [(type, ref, role)], tags)

    for r in range(ROWS):
        for c in range(COLS):
            lat, lon = to_latlon(c * SPACING, r * SPACING)
            nodes.append((node_id(r, c), lat, lon, {}))
    for r in range(ROWS):
        hw = "tertiary" if r == 5 else "residential"
        ways.append((100 + r, [node_id(r, c) for c in range(COLS)], {"highway": hw, "name": "Row %d" % r}))
    for c in range(COLS):
        hw = "tertiary" if c == 12 else "residential"
        ways.append((200 + c, [node_id(r, c) for r in range(ROWS)], {"highway": hw, "name": "Col %d" % c}))
    ways.append((300, [node_id(i, i) for i in range(4)], {"highway": "footway"}))
    ways.append((301, [node_id(15, 2), node_id(16, 3)], {"highway": "cycleway", "foot": "yes"}))

    # Not walkable: motorway east of town, plain cycleway.
    for i in range(5):
        lat, lon = to_latlon(2300.0, 300.0 * i)
        nodes.append((901 + i, lat, lon, {}))
    ways.append((400, [901 + i for i in range(5)], {"highway": "motorway"}))
    for i in range(2):
        lat, lon = to_latlon(2100.0 + 50 * i, 1500.0)
        nodes.append((960 + i, lat, lon, {}))
    ways.append((401, [960, 961], {"highway": "cycleway"}))
    # Small disconnected footway island north-east.
    for i in range(2):
        lat, lon = to_latlon(2050.0, 2050.0 + 40 * i)
        nodes.append((950 + i, lat, lon, {}))
    ways.append((402, [950, 951], {"highway": "footway"}))

    next_node = 5000

    def polygon(cx, cy, w, h):
        nonlocal next_node
        ids = []
        for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)):
            lat, lon = to_latlon(cx + dx, cy + dy)
            nodes.append((next_node, lat, lon, {}))
            ids.append(next_node)
            next_node += 1
        return ids + [ids[0]]

    blocks = [(br, bc) for br in range(ROWS - 1) for bc in range(COLS - 1)]
    rng.shuffle(blocks)
    kinds = ["house", "residential", "apartments", "detached", "terrace", "semidetached_house", "yes+addr"]
    wid = 1
    for i in range(49):
        br, bc = blocks[i]
        cx = bc * SPACING + 50 + rng.uniform(-20, 20)
        cy = br * SPACING + 50 + rng.uniform(-20, 20)
        w = rng.uniform(10, 22)
        h = rng.uniform(10, 22)
        kind = kinds[i % len(kinds)]
        tags = {"building": "yes", "addr:housenumber": str(i + 1)} if kind == "yes+addr" else {"building": kind}
        ways.append((wid, polygon(cx, cy, w, h), tags))
        wid += 1
    # One residence mapped as a multipolygon relation with an untagged outer way.
    br, bc = blocks[49]
    outer = 80
    ways.append((outer, polygon(bc * SPACING + 50, br * SPACING + 50, 30, 18), {}))
    relations.append((7001, [("way", outer, "outer")], {"type": "multipolygon", "building": "apartments"}))
    # Non-residential buildings.
    for j, tags in enumerate([{"building": "garage"}, {"building": "garage"}, {"building": "yes"},
                              {"building": "commercial"}, {"building": "yes"}, {"building": "industrial"}]):
        br, bc = blocks[50 + j]
        ways.append((60 + j, polygon(bc * SPACING + 50, br * SPACING + 50, 12, 12), tags))

    pois = [
        (8001, 3, 3, {"amenity": "school", "name": "North Primary"}),
        (8002, 16, 15, {"amenity": "school", "name": "Hill School"}),
        (8004, 2, 17, {"shop": "supermarket", "name": "East Market"}),
        (8005, 10, 6, {"shop": "supermarket", "name": "Central Grocer"}),
        (8006, 17, 4, {"shop": "supermarket", "name": "North Foods"}),
        (8007, 6, 11, {"amenity": "restaurant", "name": "Trattoria"}),
        (8008, 14, 9, {"amenity": "restaurant", "name": "Bistro"}),
        (8009, 1, 8, {"amenity": "restaurant", "name": "Diner"}),
        (8010, 18, 12, {"amenity": "university", "name": "Main Campus"}),
        (8011, 8, 18, {"amenity": "university", "name": "Engineering Institute"}),
        (8012, 12, 1, {"amenity": "university", "name": "Arts Institute"}),
        (8013, 9, 9, {"amenity": "charging_station"}),
    ]
    for pid, r, c, tags in pois:
        lat, lon = to_latlon(c * SPACING + 30.0, r * SPACING + 25.0)
        nodes.append((pid, lat, lon, tags))
    # School mapped as an area.
    ways.append((90, polygon(7 * SPACING + 50, 4 * SPACING + 50, 40, 30), {"amenity": "school", "name": "Lake School"}))
    # A supermarket 700 m south of the street grid: beyond the snap radius.
    lat, lon = to_latlon(1000.0, -700.0)
    nodes.append((8014, lat, lon, {"shop": "supermarket", "name": "Far Away Mart"}))

    def esc(s):
        return s.replace("&", "&amp;").replace("\"", "&quot;").replace("<", "&lt;")

    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="gen_minicity">']
    lat_min, lon_min = to_latlon(-50, -900)
    lat_max, lon_max = to_latlon(2400, 2200)
    lines.append('  <bounds minlat="%.7f" minlon="%.7f" maxlat="%.7f" maxlon="%.7f"/>' % (lat_min, lon_min, lat_max, lon_max))
    for nid, lat, lon, tags in sorted(nodes):
        if tags:
            lines.append('  <node id="%d" lat="%.7f" lon="%.7f">' % (nid, lat, lon))
            for k, v in tags.items():
                lines.append('    <tag k="%s" v="%s"/>' % (esc(k), esc(v)))
            lines.append('  </node>')
        else:
            lines.append('  <node id="%d" lat="%.7f" lon="%.7f"/>' % (nid, lat, lon))
    for wid, refs, tags in sorted(ways, key=lambda w: w[0]):
        lines.append('  <way id="%d">' % wid)
        for ref in refs:
            lines.append('    <nd ref="%d"/>' % ref)
        for k, v in tags.items():
            lines.append('    <tag k="%s" v="%s"/>' % (esc(k), esc(v)))
        lines.append('  </way>')
    for rid, members, tags in relations:
        lines.append('  <relation id="%d">' % rid)
        for t, ref, role in members:
            lines.append('    <member type="%s" ref="%d" role="%s"/>' % (t, ref, role))
        for k, v in tags.items():
            lines.append('    <tag k="%s" v="%s"/>' % (esc(k), esc(v)))
        lines.append('  </relation>')
    lines.append('</osm>')
    with open(os.path.join(OUT, "minicity.osm"), "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    write_gtfs()
    write_osm()
