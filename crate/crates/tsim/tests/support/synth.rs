//! Synthetic OSM extract: a regular street grid over a bounding box, with
//! houses and a few tagged places on it.

use std::fmt::Write;

use tscore::geo::BBox;

pub struct Grid {
    pub spacing_m: f64,
    /// Every n-th block gets a house.
    pub house_every: usize,
}

/// OSM XML for a grid covering `bbox` grown by `margin_m` on every side.
pub fn street_grid_osm(bbox: &BBox, margin_m: f64, g: &Grid) -> String {
    let lat0 = (bbox.min_lat + bbox.max_lat) / 2.0;
    let m_lat = 1.0 / 111_320.0;
    let m_lon = 1.0 / (111_320.0 * lat0.to_radians().cos());
    let (s, w) = (bbox.min_lat - margin_m * m_lat, bbox.min_lon - margin_m * m_lon);
    let rows = (((bbox.max_lat - bbox.min_lat) / m_lat + 2.0 * margin_m) / g.spacing_m).ceil() as usize + 1;
    let cols = (((bbox.max_lon - bbox.min_lon) / m_lon + 2.0 * margin_m) / g.spacing_m).ceil() as usize + 1;
    let at = |i: f64, j: f64| (s + i * g.spacing_m * m_lat, w + j * g.spacing_m * m_lon);
    let node = |i: usize, j: usize| 1 + i * cols + j;

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"tsim-tests\">\n");
    for i in 0..rows {
        for j in 0..cols {
            let (lat, lon) = at(i as f64, j as f64);
            writeln!(out, "  <node id=\"{}\" lat=\"{lat:.7}\" lon=\"{lon:.7}\"/>", node(i, j)).unwrap();
        }
    }
    let mut next = rows * cols + 1;
    let mut way = 1;
    let mut ways = String::new();
    let mut emit_way = |buf: &mut String, nodes: &[usize], tags: &[(&str, &str)]| {
        write!(buf, "  <way id=\"{way}\">").unwrap();
        for n in nodes {
            write!(buf, "<nd ref=\"{n}\"/>").unwrap();
        }
        for (k, v) in tags {
            write!(buf, "<tag k=\"{k}\" v=\"{v}\"/>").unwrap();
        }
        buf.push_str("</way>\n");
        way += 1;
    };
    let street = [("highway", "residential")];
    for i in 0..rows {
        emit_way(&mut ways, &(0..cols).map(|j| node(i, j)).collect::<Vec<_>>(), &street);
    }
    for j in 0..cols {
        emit_way(&mut ways, &(0..rows).map(|i| node(i, j)).collect::<Vec<_>>(), &street);
    }

    // Houses: a 12 m square in the south-west corner of every n-th block.
    let side = 12.0 / g.spacing_m;
    let mut block = 0;
    let mut places = String::new();
    let kinds = [("shop", "supermarket", 7), ("amenity", "restaurant", 5), ("amenity", "school", 11), ("amenity", "university", 97)];
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            block += 1;
            if block % g.house_every == 0 {
                let (bi, bj) = (i as f64 + 0.2, j as f64 + 0.2);
                let ring: Vec<usize> = [(0.0, 0.0), (0.0, side), (side, side), (side, 0.0)]
                    .iter()
                    .map(|(di, dj)| {
                        let (lat, lon) = at(bi + di, bj + dj);
                        writeln!(out, "  <node id=\"{next}\" lat=\"{lat:.7}\" lon=\"{lon:.7}\"/>").unwrap();
                        next += 1;
                        next - 1
                    })
                    .collect();
                let closed: Vec<usize> = ring.iter().copied().chain([ring[0]]).collect();
                emit_way(&mut ways, &closed, &[("building", "house")]);
            }
            for (k, v, every) in kinds {
                if block % (every * g.house_every) == 3 {
                    let (lat, lon) = at(i as f64 + 0.5, j as f64 + 0.5);
                    writeln!(places, "  <node id=\"{next}\" lat=\"{lat:.7}\" lon=\"{lon:.7}\"><tag k=\"{k}\" v=\"{v}\"/></node>").unwrap();
                    next += 1;
                }
            }
        }
    }
    out.push_str(&places);
    out.push_str(&ways);
    out.push_str("</osm>\n");
    out
}
