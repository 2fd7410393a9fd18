use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthOption {
    /// Hz.
    pub capacity: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmOption {
    pub count: usize,
    pub cost: f64,
}

/// Rental options the infrastructure provider offers in one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionCatalog {
    pub bandwidth: Vec<BandwidthOption>,
    pub vms: Vec<VmOption>,
    /// Cycles per second of every VM in the region.
    pub vm_frequency: f64,
}

impl RegionCatalog {
    pub fn validate(&self, region: usize) -> Result<()> {
        let field = |name: &str| format!("catalog.regions[{region}].{name}");
        if self.bandwidth.is_empty() {
            return Err(Error::field(field("bandwidth"), "must not be empty"));
        }
        if self.vms.is_empty() {
            return Err(Error::field(field("vms"), "must not be empty"));
        }
        if !self.vm_frequency.is_finite() || self.vm_frequency <= 0.0 {
            return Err(Error::field(field("vm_frequency"), "must be positive"));
        }
        let mut prev = 0.0;
        for o in &self.bandwidth {
            if !o.capacity.is_finite() || o.capacity <= prev {
                return Err(Error::field(
                    field("bandwidth"),
                    "capacities must be positive and strictly increasing",
                ));
            }
            if !o.cost.is_finite() || o.cost < 0.0 {
                return Err(Error::field(field("bandwidth"), "costs must be non-negative"));
            }
            prev = o.capacity;
        }
        let mut prev = 0;
        for o in &self.vms {
            if o.count <= prev {
                return Err(Error::field(
                    field("vms"),
                    "counts must be positive and strictly increasing",
                ));
            }
            if !o.cost.is_finite() || o.cost < 0.0 {
                return Err(Error::field(field("vms"), "costs must be non-negative"));
            }
            prev = o.count;
        }
        Ok(())
    }

    /// Compute capacity of VM option `k` in cycles per second.
    pub fn vm_capacity(&self, k: usize) -> f64 {
        self.vms[k].count as f64 * self.vm_frequency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceCatalog {
    pub regions: Vec<RegionCatalog>,
}

impl ResourceCatalog {
    pub fn uniform(region: RegionCatalog, count: usize) -> Self {
        ResourceCatalog {
            regions: vec![region; count],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regions
            .iter()
            .enumerate()
            .try_for_each(|(i, r)| r.validate(i))
    }
}

/// One-hot rental choice for a region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSlice {
    pub bw_choice: Vec<u8>,
    pub vm_choice: Vec<u8>,
}

impl RegionSlice {
    pub fn from_indices(bw: usize, bw_options: usize, vm: usize, vm_options: usize) -> Self {
        let mut bw_choice = vec![0; bw_options];
        bw_choice[bw] = 1;
        let mut vm_choice = vec![0; vm_options];
        vm_choice[vm] = 1;
        RegionSlice {
            bw_choice,
            vm_choice,
        }
    }

    fn one_hot(v: &[u8], constraint: &'static str, region: usize) -> Result<usize> {
        if let Some(bad) = v.iter().find(|&&x| x > 1) {
            return Err(Error::ConstraintViolation {
                constraint: "C1",
                detail: format!("region {region}: choice entry {bad} is not binary"),
            });
        }
        let ones: Vec<usize> = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == 1)
            .map(|(k, _)| k)
            .collect();
        match ones.as_slice() {
            [k] => Ok(*k),
            _ => Err(Error::ConstraintViolation {
                constraint,
                detail: format!(
                    "region {region} must rent exactly one type, found {} selected",
                    ones.len()
                ),
            }),
        }
    }

    /// Selected (bandwidth, VM) option indices, checking the one-hot law.
    pub fn indices(&self, region: usize) -> Result<(usize, usize)> {
        Ok((
            Self::one_hot(&self.bw_choice, "C2", region)?,
            Self::one_hot(&self.vm_choice, "C3", region)?,
        ))
    }
}

/// Per-region rental choices for one long slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceDecision {
    pub regions: Vec<RegionSlice>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RentalSummary {
    /// Total rented bandwidth over all regions, Hz.
    pub bandwidth: f64,
    /// Total rented VM count.
    pub vms: usize,
    /// Rental cost for the long slot.
    pub cost: f64,
    /// Per-region (bandwidth, VM count).
    pub per_region: Vec<(f64, usize)>,
}

/// Aggregate rented capacity and total rental cost of `slices`.
pub fn rented_and_cost(catalog: &ResourceCatalog, slices: &SliceDecision) -> Result<RentalSummary> {
    if slices.regions.len() != catalog.regions.len() {
        return Err(Error::Shape(format!(
            "{} region slices for {} catalog regions",
            slices.regions.len(),
            catalog.regions.len()
        )));
    }
    let mut summary = RentalSummary {
        bandwidth: 0.0,
        vms: 0,
        cost: 0.0,
        per_region: Vec::with_capacity(catalog.regions.len()),
    };
    for (i, (cat, slice)) in catalog.regions.iter().zip(&slices.regions).enumerate() {
        if slice.bw_choice.len() != cat.bandwidth.len() || slice.vm_choice.len() != cat.vms.len() {
            return Err(Error::Shape(format!(
                "region {i}: choice vector lengths do not match the catalog"
            )));
        }
        let (b, v) = slice.indices(i)?;
        let bw = cat.bandwidth[b];
        let vm = cat.vms[v];
        summary.bandwidth += bw.capacity;
        summary.vms += vm.count;
        summary.cost += bw.cost + vm.cost;
        summary.per_region.push((bw.capacity, vm.count));
    }
    Ok(summary)
}
