#!/usr/bin/env python3
"""Independently count rows and elements in the minicity fixture and write manifest.json.

This reads the committed CSV and XML files back with the Python stdlib only; it
shares no code with the Rust ingestion path and serves as its oracle.
"""
import csv
import datetime
import json
import os
import xml.etree.ElementTree as ET

DIR = os.path.join(os.path.dirname(__file__), "..", "crates", "tsim", "tests", "fixtures", "minicity")
DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]


def rows(name):
    with open(os.path.join(DIR, "gtfs", name), newline="", encoding="utf-8-sig") as f:
        return list(csv.DictReader(f))


def secs(s):
    h, m, x = s.split(":")
    return int(h) * 3600 + int(m) * 60 + int(x)


def active(service, date, cal, exc):
    key = date.strftime("%Y%m%d")
    if (service, key) in exc:
        return exc[(service, key)] == "1"
    c = cal.get(service)
    if c is None:
        return False
    if not (c["start_date"] <= key <= c["end_date"]):
        return False
    return c[DAYS[date.weekday()]] == "1"


def gtfs_manifest():
    stops = rows("stops.txt")
    routes = rows("routes.txt")
    trips = rows("trips.txt")
    stop_times = rows("stop_times.txt")
    cal = {c["service_id"]: c for c in rows("calendar.txt")}
    exc = {(e["service_id"], e["date"]): e["exception_type"] for e in rows("calendar_dates.txt")}

    start = min(c["start_date"] for c in cal.values())
    d = datetime.datetime.strptime(start, "%Y%m%d").date()
    while d.weekday() != 0:
        d += datetime.timedelta(days=1)
    ref = d
    prev = ref - datetime.timedelta(days=1)

    by_trip = {}
    for st in stop_times:
        by_trip.setdefault(st["trip_id"], []).append(st)
    service_of = {t["trip_id"]: t["service_id"] for t in trips}

    hourly = {s["stop_id"]: [0] * 24 for s in stops}
    total = 0
    for trip_id, sts in by_trip.items():
        sts.sort(key=lambda r: int(r["stop_sequence"]))
        svc = service_of[trip_id]
        today = active(svc, ref, cal, exc)
        yesterday = active(svc, prev, cal, exc)
        for st in sts[:-1]:
            t = secs(st["departure_time"])
            if today and t < 86400:
                hourly[st["stop_id"]][t // 3600] += 1
                total += 1
            if yesterday and t >= 86400:
                hourly[st["stop_id"]][(t // 3600) % 24] += 1
                total += 1

    trips_today = sum(1 for t in trips if active(t["service_id"], ref, cal, exc))
    return {
        "stops": len(stops),
        "routes": len(routes),
        "trips": len(trips),
        "stop_times": len(stop_times),
        "reference_date": ref.isoformat(),
        "trips_on_reference_day": trips_today,
        "departures_on_reference_day": total,
        "hourly_frequency": hourly,
    }


def osm_manifest():
    root = ET.parse(os.path.join(DIR, "minicity.osm")).getroot()
    residential = {"residential", "apartments", "house", "detached", "semidetached_house", "terrace"}
    walkable = {"footway", "path", "pedestrian", "residential", "living_street", "service",
                "unclassified", "tertiary", "secondary", "primary", "steps", "track"}

    def tags(el):
        return {t.get("k"): t.get("v") for t in el.findall("tag")}

    residences = 0
    walk_ways = 0
    walk_nodes = set()
    for el in list(root.findall("way")) + list(root.findall("relation")):
        tg = tags(el)
        b = tg.get("building")
        if b in residential or (b == "yes" and any(k.startswith("addr:") for k in tg)):
            residences += 1
        if el.tag == "way":
            hw = tg.get("highway")
            if hw in walkable or (hw == "cycleway" and tg.get("foot") == "yes"):
                walk_ways += 1
                walk_nodes.update(nd.get("ref") for nd in el.findall("nd"))
    matchers = {"schools": ("amenity", "school"), "groceries": ("shop", "supermarket"),
                "restaurants": ("amenity", "restaurant"), "university": ("amenity", "university")}
    tagged = {}
    for el in list(root.findall("node")) + list(root.findall("way")):
        tg = tags(el)
        for cat, (k, v) in matchers.items():
            if tg.get(k) == v:
                tagged[cat] = tagged.get(cat, 0) + 1
    return {
        "residences": residences,
        "walkable_ways": walk_ways,
        "graph_nodes": len(walk_nodes),
        "tagged_pois": tagged,
    }


if __name__ == "__main__":
    manifest = {"gtfs": gtfs_manifest(), "osm": osm_manifest()}
    with open(os.path.join(DIR, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
