#!/usr/bin/env python3
"""Regenerates fixtures/la2025, the January 2025 Los Angeles wildfire desk scenario.

Output is deterministic: fixed seeds, fixed zip timestamps, sorted keys.
"""
import argparse
import json
import math
import random
import struct
import zipfile
import zlib
from datetime import datetime, timedelta, timezone
from pathlib import Path

UTC = timezone.utc
LIVE_START = datetime(2025, 1, 7, 19, 0, tzinfo=UTC)
SPIKE_AT = datetime(2025, 1, 7, 20, 0, tzinfo=UTC)


def png(rgb, size=16):
    raw = b"".join(b"\x00" + bytes(rgb) * size for _ in range(size))

    def chunk(kind, data):
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def stamp(t):
    return t.strftime("%Y%m%d%H%M%S")


def iso(t):
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# GDELT

ARTICLES = [
    # (event id, added, url, place, lat, lon, actor1, actor2, code, text)
    (
        1214000001,
        datetime(2025, 1, 7, 19, 0, tzinfo=UTC),
        "https://www.latimes.com/california/story/2025-01-07/los-angeles-wildfires-santa-ana-winds",
        "Los Angeles, California, United States",
        34.0522,
        -118.2437,
        ("USAGOV", "LOS ANGELES"),
        ("USACVL", "RESIDENT"),
        "020",
        "Fast-moving Los Angeles wildfires driven by a severe Santa Ana wind event are burning across the county. "
        "The Los Angeles Fire Department urged residents in the foothills to prepare to evacuate as gusts topped 80 mph.",
    ),
    (
        1214000002,
        datetime(2025, 1, 7, 19, 15, tzinfo=UTC),
        "https://ktla.com/news/local-news/palisades-fire-evacuations-ordered",
        "Pacific Palisades, California, United States",
        34.0481,
        -118.5265,
        ("USAGOV", "LOS ANGELES"),
        ("USACVL", "RESIDENT"),
        "0233",
        "The Palisades Fire broke out in the hills above Pacific Palisades on Tuesday morning and spread quickly. "
        "The Los Angeles Fire Department ordered evacuations and residents abandoned cars on Sunset Boulevard.",
    ),
    (
        1214000003,
        datetime(2025, 1, 7, 19, 40, tzinfo=UTC),
        "https://apnews.com/article/california-pacific-palisades-wildfire-malibu",
        "Santa Monica, California, United States",
        34.0195,
        -118.4912,
        ("USAGOV", "FIRE DEPARTMENT"),
        ("", ""),
        "073",
        "The 2025 Pacific Palisades wildfire has burned thousands of acres between Santa Monica and Malibu. "
        "LAFD crews opened shelters for displaced families as smoke blanketed the coast.",
    ),
    (
        1214000004,
        datetime(2025, 1, 7, 19, 50, tzinfo=UTC),
        "https://www.sacbee.com/news/politics-government/capitol-alert/article-budget",
        "Sacramento, California, United States",
        38.5816,
        -121.4944,
        ("USAGOV", "CALIFORNIA"),
        ("USALEG", "LEGISLATURE"),
        "036",
        "State budget negotiations continued in Sacramento.",
    ),
]


def gdelt_row(a):
    eid, added, url, place, lat, lon, actor1, actor2, code, _ = a
    cols = [""] * 61
    cols[0] = str(eid)
    cols[1] = added.strftime("%Y%m%d")
    cols[2] = added.strftime("%Y%m")
    cols[3] = added.strftime("%Y")
    cols[4] = "2025.0192"
    cols[5], cols[6] = actor1
    cols[7] = "USA"
    cols[15], cols[16] = actor2
    cols[25] = "1"
    cols[26] = code
    cols[27] = code[:3]
    cols[28] = code[:2]
    cols[29] = "1"
    cols[30] = "3.0"
    cols[31] = cols[32] = cols[33] = "4"
    cols[34] = "-6.25"
    cols[51] = "4"
    cols[52] = place
    cols[53] = "US"
    cols[54] = "USCA"
    cols[56] = f"{lat:.4f}"
    cols[57] = f"{lon:.4f}"
    cols[59] = stamp(added)
    cols[60] = url
    return "\t".join(cols)


def write_gdelt(root):
    d = root / "gdelt"
    d.mkdir(parents=True, exist_ok=True)
    rows = [gdelt_row(a) for a in ARTICLES]
    rows.append("1214000099\t20250107\ttruncated row")
    info = zipfile.ZipInfo("20250107190000.export.CSV", date_time=(2025, 1, 7, 19, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    with zipfile.ZipFile(d / "20250107190000.export.CSV.zip", "w") as z:
        z.writestr(info, "\n".join(rows) + "\n")
    with open(root / "articles.tsv", "w", encoding="utf-8") as f:
        for a in ARTICLES:
            f.write(f"{a[2]}\t{a[9]}\n")


# ---------------------------------------------------------------------------
# PeMS (District 7 station hour files plus one Bay Area station)

STATIONS = [
    # station, district, freeway, base speed
    ("716943", "7", "405", 58.0),
    ("717046", "7", "10", 55.0),
    ("773195", "7", "1", 45.0),
    ("400001", "4", "101", 60.0),
]


def write_pems(root, rng):
    d = root / "pems"
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    start = LIVE_START - timedelta(hours=23)
    for h in range(26):
        t = start + timedelta(hours=h)
        for station, district, fwy, base in STATIONS:
            speed = base + rng.uniform(-3, 3)
            occ = 0.06 + rng.uniform(-0.01, 0.01)
            # Pacific Coast Highway closes once the fire reaches the coast.
            if station == "773195" and t >= datetime(2025, 1, 7, 20, 0, tzinfo=UTC):
                speed, occ = 3.0 + rng.uniform(0, 1), 0.62
            flow = int(3000 * occ / 0.06)
            lines.append(
                f"{t.strftime('%m/%d/%Y %H:%M:%S')},{station},{district},{fwy},N,ML,1.2,12,100,{flow},{occ:.4f},{speed:.1f}"
            )
    lines.append("01/07/2025 20:00:00,716944,7,405,S,ML,1.1,12,100,2900,1.7500,55.0")  # bad occupancy
    (d / "d07_text_station_hour_2025_01_07.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# CCTV

CAMERAS = [
    # time, camera, lat, lon, tags, color
    (datetime(2025, 1, 7, 19, 5, tzinfo=UTC), "D7-I405-Sunset", 34.0716, -118.4705, "traffic, clear sky", (120, 150, 200)),
    (datetime(2025, 1, 7, 19, 45, tzinfo=UTC), "D7-PCH-Temescal", 34.0369, -118.5534, "smoke, hillside, traffic", (150, 120, 100)),
    (datetime(2025, 1, 7, 20, 10, tzinfo=UTC), "D7-I405-Getty", 34.0861, -118.4750, "smoke, haze", (170, 150, 130)),
    (datetime(2025, 1, 7, 20, 30, tzinfo=UTC), "D7-I5-Burbank", 34.1808, -118.3090, "traffic, clear sky", (110, 140, 210)),
    (datetime(2025, 1, 7, 20, 50, tzinfo=UTC), "D7-PCH-Topanga", 34.0383, -118.5820, "flames, smoke, fire apparatus", (200, 90, 40)),
    (datetime(2025, 1, 7, 21, 0, tzinfo=UTC), "D3-I5-Sacramento", 38.5800, -121.4900, "smoke", (160, 140, 120)),
]


def write_cctv(root):
    d = root / "cctv"
    img = d / "images"
    img.mkdir(parents=True, exist_ok=True)
    lines = ["timestamp,cameraId,lat,lon,imagePath"]
    for t, cam, lat, lon, tags, color in CAMERAS:
        name = f"{cam}_{stamp(t)}.png"
        (img / name).write_bytes(png(color))
        (img / (name + ".tags")).write_text(tags + "\n")
        lines.append(f"{iso(t)},{cam},{lat},{lon},images/{name}")
    lines.append("# camera offline; image never arrived")
    lines.append(f"{iso(datetime(2025, 1, 7, 20, 40, tzinfo=UTC))},D7-I10-Lincoln,34.0250,-118.4800,images/missing.png")
    (d / "manifest.csv").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# OpenWeather group responses

WEATHER_STATIONS = [
    (5393212, "Santa Monica", 34.0195, -118.4912),
    (5381396, "Pasadena", 34.1478, -118.1445),
]


def write_weather(root, rng):
    d = root / "weather"
    d.mkdir(parents=True, exist_ok=True)
    records = []
    start = LIVE_START - timedelta(hours=23)
    for h in range(26):
        t = start + timedelta(hours=h)
        for sid, name, lat, lon in WEATHER_STATIONS:
            wind = 6.0 + rng.uniform(-1, 1) + (14.0 if t >= datetime(2025, 1, 7, 12, 0, tzinfo=UTC) else 0.0)
            smoky = name == "Santa Monica" and t >= datetime(2025, 1, 7, 20, 0, tzinfo=UTC)
            rec = {
                "id": sid,
                "name": name,
                "coord": {"lat": lat, "lon": lon},
                "dt": int(t.timestamp()),
                "weather": [{"description": "smoke" if smoky else "clear sky"}],
                "wind": {"speed": round(wind, 2)},
                "main": {"humidity": 9},
            }
            records.append(rec)
    (d / "group.json").write_text(json.dumps({"cnt": len(records), "list": records}, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# PurpleAir: a week of hourly history, a spike in Pacific Palisades, and a
# sensor stuck at a constant value.

def write_purpleair(root, rng):
    d = root / "purpleair"
    d.mkdir(parents=True, exist_ok=True)
    fields = ["sensor_index", "name", "latitude", "longitude", "time_stamp", "pm2.5_atm"]
    rows = []
    start = SPIKE_AT - timedelta(days=7)
    t = start
    while t <= SPIKE_AT + timedelta(hours=1):
        base = 9.0 + 3.0 * math.sin(2 * math.pi * (t.hour / 24.0)) + rng.uniform(-1.5, 1.5)
        value = 412.6 if t == SPIKE_AT else (286.0 if t > SPIKE_AT else base)
        rows.append([131075, "Palisades Village", 34.0459, -118.5256, int(t.timestamp()), round(value, 1)])
        rows.append([88123, "Westwood Rooftop", 34.0635, -118.4455, int(t.timestamp()), 5.0])
        t += timedelta(hours=1)
    payload = {"api_version": "V1.0.11", "fields": fields, "data": rows}
    (d / "sensors.json").write_text(json.dumps(payload, separators=(",", ":")) + "\n")


RULES = """\
# Deterministic stub rules for the LA wildfire scenario.
# keyword<TAB>effect[;effect...]; '+' joins terms that must all occur.
# Incident rules come first, most specific first: the first matching rule
# supplies the incident candidate.
pacific palisades wildfire\tincident:2025 Pacific Palisades Wildfire|Wildfire burning between Santa Monica and Malibu;cap:Fire;same:Palisades Fire
palisades fire\tincident:Palisades Fire|Wind-driven wildfire in the hills above Pacific Palisades;cap:Fire;partof:2025 Los Angeles Wildfires
los angeles wildfires\tincident:2025 Los Angeles Wildfires|Wind-driven wildfires burning across Los Angeles County;cap:Fire

# Actors and events
los angeles fire department\tactor:Los Angeles Fire Department|USAGOV
lafd\tactor:LAFD|USAGOV;same:Los Angeles Fire Department
residents\tactor:Residents|USACVL
families\tactor:Displaced Families|USACVL
evacuat\tevent:020
shelters\tevent:073

# Captions (matched against image tags) and cross-modal links
flames\tcaption:Open flames on the hillside beside the roadway.;link:wildfire
smoke\tcaption:Heavy smoke over the roadway.;link:wildfire
pm2.5+anomalous\tlink:wildfire
"""


def write_config(root):
    la = {"place": "Los Angeles", "lat": 34.0522, "lon": -118.2437, "radiusKm": 60}
    radius = {"lat": 34.0522, "lon": -118.2437, "radiusKm": 60}
    config = {
        "sources": [
            {"name": "GDELT", "kind": "gdelt", "input": "gdelt", "articles": "articles.tsv", "filter": la},
            {"name": "PeMS", "kind": "pems", "input": "pems", "filter": {"place": "District 7"}},
            {"name": "CCTV", "kind": "cctv", "input": "cctv/manifest.csv", "filter": radius},
            {"name": "OpenWeather", "kind": "weather", "input": "weather", "filter": radius},
            {"name": "PurpleAir", "kind": "airquality", "input": "purpleair", "filter": radius},
        ],
        "backend": {"kind": "stub", "rules": "stub_rules.tsv"},
        "cameoCodebook": "../../data/cameo_events.tsv",
        "replay": {"clockStart": iso(LIVE_START), "speedup": 600},
    }
    (root / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    (root / "stub_rules.tsv").write_text(RULES)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures" / "la2025"))
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20250107)
    write_gdelt(out)
    write_pems(out, rng)
    write_cctv(out)
    write_weather(out, rng)
    write_purpleair(out, rng)
    write_config(out)


if __name__ == "__main__":
    main()
