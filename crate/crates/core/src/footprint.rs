//! Memory estimates for preprocessing artifacts and encoder layers.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub entities: u64,
    pub relations: u64,
    pub bloom_bits: u64,
    pub transe_dim: u64,
    pub hidden: u64,
    pub bloom_bytes: u64,
    pub transe_bytes: u64,
    /// Weights of one GraphSAGE layer, `2·h²`.
    pub sage_layer_floats: u64,
    /// Weights of one R-GCN layer, `(1 + |R|)·h²`.
    pub rgcn_layer_floats: u64,
}

/// Packed Bloom rows: `ceil(m / 8)` bytes per entity.
pub fn bloom_bytes(m: u64, entities: u64) -> u64 {
    m.div_ceil(8) * entities
}

/// f32 entity and relation tables.
pub fn transe_bytes(dim: u64, entities: u64, relations: u64) -> u64 {
    4 * dim * entities + 4 * dim * relations
}

pub fn sage_layer_floats(hidden: u64) -> u64 {
    2 * hidden * hidden
}

pub fn rgcn_layer_floats(hidden: u64, relations: u64) -> u64 {
    (1 + relations) * hidden * hidden
}

impl Footprint {
    pub fn new(entities: u64, relations: u64, bloom_bits: u64, transe_dim: u64, hidden: u64) -> Self {
        Self {
            entities,
            relations,
            bloom_bits,
            transe_dim,
            hidden,
            bloom_bytes: bloom_bytes(bloom_bits, entities),
            transe_bytes: transe_bytes(transe_dim, entities, relations),
            sage_layer_floats: sage_layer_floats(hidden),
            rgcn_layer_floats: rgcn_layer_floats(hidden, relations),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "entities            {}\n\
             relations           {}\n\
             bloom bits (m)      {}\n\
             bloom bytes         {} ({})\n\
             transe dim          {}\n\
             transe bytes        {} ({})\n\
             hidden width        {}\n\
             sage layer floats   {}\n\
             rgcn layer floats   {}\n",
            self.entities,
            self.relations,
            self.bloom_bits,
            self.bloom_bytes,
            human_bytes(self.bloom_bytes),
            self.transe_dim,
            self.transe_bytes,
            human_bytes(self.transe_bytes),
            self.hidden,
            self.sage_layer_floats,
            self.rgcn_layer_floats,
        )
    }
}

/// Decimal units, two decimals: `1_280_000_000` prints as `1.28 GB`.
pub fn human_bytes(b: u64) -> String {
    const UNITS: [&str; 5] = ["B", "KB", "MB", "GB", "TB"];
    let mut v = b as f64;
    let mut u = 0;
    while v >= 1000.0 && u < UNITS.len() - 1 {
        v /= 1000.0;
        u += 1;
    }
    if u == 0 {
        format!("{b} B")
    } else {
        format!("{v:.2} {}", UNITS[u])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sizes() {
        assert_eq!(bloom_bytes(1024, 10_000_000), 1_280_000_000);
        assert_eq!(human_bytes(bloom_bytes(1024, 10_000_000)), "1.28 GB");
        assert_eq!(bloom_bytes(959, 1), 120);
        assert_eq!(transe_bytes(200, 10_000_000, 0), 8_000_000_000);
        assert_eq!(rgcn_layer_floats(500, 237), 59_500_000);
        assert_eq!(sage_layer_floats(500), 500_000);
    }

    #[test]
    fn report_lists_every_size() {
        let f = Footprint::new(14541, 237, 978, 100, 100);
        assert_eq!(f.bloom_bytes, 123 * 14541);
        assert_eq!(f.transe_bytes, 400 * (14541 + 237));
        let text = f.to_text();
        assert!(text.contains("rgcn layer floats   2380000"));
        assert_eq!(human_bytes(999), "999 B");
    }
}
