//! Synthetic stand-ins for crash extracts.

use super::dataset::TabularDataset;
use super::schema::{ColumnSpec, Schema, N_CLASSES};
use crate::error::{Error, Result};
use crate::seed::rng;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub values: Vec<String>,
    /// Unnormalized weights over `values`, one list per class.
    pub per_class: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousFeature {
    pub name: String,
    pub per_class: Vec<Gaussian>,
    #[serde(default)]
    pub missing_rate: f64,
}

/// Class-conditional generator: draw a class from the priors, then every
/// feature independently given the class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub class_priors: Vec<f64>,
    #[serde(default)]
    pub categorical: Vec<CategoricalFeature>,
    #[serde(default)]
    pub continuous: Vec<ContinuousFeature>,
    #[serde(default = "default_label")]
    pub label_column: String,
}

fn default_label() -> String {
    "SAE_Level".to_string()
}

impl SyntheticSpec {
    pub fn schema(&self) -> Result<Schema> {
        let mut cols: Vec<ColumnSpec> = self
            .categorical
            .iter()
            .map(|c| {
                let v: Vec<&str> = c.values.iter().map(String::as_str).collect();
                ColumnSpec::categorical(&c.name, &v)
            })
            .collect();
        cols.extend(self.continuous.iter().map(|c| ColumnSpec::continuous(&c.name)));
        cols.push(ColumnSpec::sae_label(&self.label_column));
        Schema::new(cols)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.n_rows == 0 {
            return bad("synthetic spec needs n_rows > 0".into());
        }
        if self.class_priors.len() != N_CLASSES {
            return bad(format!("need {N_CLASSES} class priors"));
        }
        if self.class_priors.iter().any(|p| !p.is_finite() || *p < 0.0)
            || self.class_priors.iter().sum::<f64>() <= 0.0
        {
            return bad(format!("degenerate class priors {:?}", self.class_priors));
        }
        for c in &self.categorical {
            if c.per_class.len() != N_CLASSES || c.per_class.iter().any(|w| w.len() != c.values.len()) {
                return bad(format!("feature '{}' needs one weight per value per class", c.name));
            }
            for (k, w) in c.per_class.iter().enumerate() {
                let live = self.class_priors[k] > 0.0;
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (live && w.iter().sum::<f64>() <= 0.0) {
                    return bad(format!("feature '{}' has degenerate weights for class {k}", c.name));
                }
            }
        }
        for c in &self.continuous {
            if c.per_class.len() != N_CLASSES
                || c.per_class.iter().any(|g| !g.mean.is_finite() || !(g.std >= 0.0) || !g.std.is_finite())
                || !(0.0..1.0).contains(&c.missing_rate)
            {
                return bad(format!("feature '{}' has invalid Gaussian parameters", c.name));
            }
        }
        Ok(())
    }

    /// Seeded i.i.d. draw of `n_rows` rows.
    pub fn synthesize(&self, seed: u64) -> Result<TabularDataset> {
        self.validate()?;
        let schema = self.schema()?;
        let mut r = rng(seed);
        let classes = WeightedIndex::new(&self.class_priors).map_err(|e| Error::contract(e.to_string()))?;
        let cat_dists: Vec<Vec<Option<WeightedIndex<f64>>>> = self
            .categorical
            .iter()
            .map(|c| c.per_class.iter().map(|w| WeightedIndex::new(w).ok()).collect())
            .collect();
        let normals: Vec<Vec<Normal<f64>>> = self
            .continuous
            .iter()
            .map(|c| {
                c.per_class
                    .iter()
                    .map(|g| Normal::new(g.mean, g.std).expect("validated"))
                    .collect()
            })
            .collect();
        let mut categorical = Vec::with_capacity(self.n_rows * self.categorical.len());
        let mut continuous = Vec::with_capacity(self.n_rows * self.continuous.len());
        let mut labels = Vec::with_capacity(self.n_rows);
        for _ in 0..self.n_rows {
            let y = classes.sample(&mut r);
            for d in &cat_dists {
                let dist = d[y].as_ref().expect("live class has weights");
                categorical.push(dist.sample(&mut r));
            }
            for (c, n) in self.continuous.iter().zip(&normals) {
                let v = n[y].sample(&mut r);
                let missing = c.missing_rate > 0.0 && r.gen::<f64>() < c.missing_rate;
                continuous.push((!missing).then_some(v));
            }
            labels.push(y);
        }
        TabularDataset::new(schema, categorical, continuous, labels)
    }

    /// Seeded, clearly separable 3-class table: 14 categorical and 6
    /// continuous columns with a 10:3:1 class imbalance.
    pub fn separable(n_rows: usize) -> Self {
        let mut categorical = Vec::new();
        for j in 0..14 {
            let k = 3 + j % 5;
            let values: Vec<String> = (0..k).map(|v| format!("v{v}")).collect();
            let per_class = (0..N_CLASSES)
                .map(|c| {
                    (0..k)
                        .map(|v| {
                            if j < 8 && v == (c + j) % k {
                                0.55 * k as f64
                            } else {
                                0.45
                            }
                        })
                        .collect()
                })
                .collect();
            categorical.push(CategoricalFeature {
                name: format!("cat_{j:02}"),
                values,
                per_class,
            });
        }
        let continuous = (0..6)
            .map(|j| ContinuousFeature {
                name: format!("num_{j}"),
                per_class: (0..N_CLASSES)
                    .map(|c| Gaussian {
                        mean: if j < 3 { 2.0 * c as f64 * if j % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 },
                        std: 1.0,
                    })
                    .collect(),
                missing_rate: if j == 5 { 0.03 } else { 0.0 },
            })
            .collect();
        Self {
            n_rows,
            class_priors: vec![10.0, 3.0, 1.0],
            categorical,
            continuous,
            label_column: default_label(),
        }
    }

    /// Class-conditional frequencies of the twenty variables of the 2024
    /// Texas crash extract (Assisted / Partial / Advanced automation), with
    /// the extract's class sizes as priors.
    pub fn crash_like(n_rows: usize) -> Self {
        let categorical = CRASH_TABLE
            .iter()
            .map(|(name, rows)| CategoricalFeature {
                name: name.to_string(),
                values: rows.iter().map(|(v, _)| v.to_string()).collect(),
                per_class: (0..N_CLASSES)
                    .map(|c| rows.iter().map(|(_, n)| n[c]).collect())
                    .collect(),
            })
            .collect();
        Self {
            n_rows,
            class_priors: vec![3345.0, 1148.0, 156.0],
            categorical,
            continuous: Vec::new(),
            label_column: default_label(),
        }
    }
}

type Counts = [f64; N_CLASSES];

const CRASH_TABLE: &[(&str, &[(&str, Counts)])] = &[
    (
        "Prsn_Injry_Sev_ID",
        &[
            ("Incapacitating Injury", [26.0, 6.0, 0.0]),
            ("Killed", [8.0, 2.0, 0.0]),
            ("Non-Incapacitating Injury", [225.0, 51.0, 7.0]),
            ("Not Injured", [2787.0, 989.0, 137.0]),
            ("Possible Injury", [299.0, 100.0, 12.0]),
        ],
    ),
    (
        "Veh_Body_Styl_ID",
        &[
            ("Ambulance", [0.0, 1.0, 0.0]),
            ("Others", [7.0, 3.0, 0.0]),
            ("Passenger Car", [1538.0, 500.0, 99.0]),
            ("Pickup", [448.0, 197.0, 16.0]),
            ("Police Car/Truck", [26.0, 8.0, 0.0]),
            ("Sport Utility Vehicle", [1222.0, 401.0, 39.0]),
            ("Truck", [25.0, 7.0, 0.0]),
            ("Truck Tractor", [17.0, 3.0, 1.0]),
            ("Van", [62.0, 28.0, 1.0]),
        ],
    ),
    (
        "Contrib_Factr_1_ID",
        &[
            ("Animal On Road", [85.0, 10.0, 2.0]),
            ("Changed Lane When Unsafe", [134.0, 30.0, 4.0]),
            ("Disregard Stop/Sign/Signal", [121.0, 25.0, 5.0]),
            ("Distraction/Inattention/CellPhone Use", [135.0, 35.0, 8.0]),
            ("Fail to Control Spd/Unsafe Spd", [287.0, 128.0, 14.0]),
            ("Failed To Drive In Single Lane", [73.0, 19.0, 7.0]),
            ("Failed To Yield Right of Way", [295.0, 96.0, 14.0]),
            ("Fatigue/Impair Visi/Under influence of Alc/Drug", [50.0, 21.0, 5.0]),
            ("Others", [2105.0, 762.0, 93.0]),
            ("Turn Improperly/Unsafe", [60.0, 22.0, 4.0]),
        ],
    ),
    (
        "Crash_Speed_Limit",
        &[
            ("25 MPH or less", [196.0, 114.0, 11.0]),
            ("30-45 MPH", [1988.0, 752.0, 81.0]),
            ("50-65 MPH", [825.0, 201.0, 47.0]),
            ("70 MPH and Over", [336.0, 81.0, 17.0]),
        ],
    ),
    (
        "Wthr_Cond_ID",
        &[
            ("Clear", [2522.0, 1002.0, 128.0]),
            ("Cloudy", [531.0, 87.0, 16.0]),
            ("Fog", [19.0, 5.0, 2.0]),
            ("Others", [8.0, 1.0, 0.0]),
            ("Rain", [262.0, 52.0, 10.0]),
            ("Severe Crosswinds", [2.0, 0.0, 0.0]),
            ("Sleet/Hail", [0.0, 1.0, 0.0]),
            ("Snow", [1.0, 0.0, 0.0]),
        ],
    ),
    (
        "Light_Cond_ID",
        &[
            ("Dark, Lighted", [429.0, 209.0, 25.0]),
            ("Dark, Not Lighted", [265.0, 64.0, 18.0]),
            ("Dark, Unknown Lighting", [17.0, 5.0, 0.0]),
            ("Dawn", [55.0, 12.0, 1.0]),
            ("Daylight", [2515.0, 846.0, 109.0]),
            ("Dusk", [60.0, 12.0, 3.0]),
            ("Other (Explain In Narrative)", [1.0, 0.0, 0.0]),
            ("Unknown", [3.0, 0.0, 0.0]),
        ],
    ),
    (
        "Entr_Road_ID",
        &[
            ("Cloverleaf", [1.0, 0.0, 0.0]),
            ("Five Entering Roads", [4.0, 0.0, 0.0]),
            ("Four Entering Roads", [665.0, 232.0, 26.0]),
            ("Not Applicable", [2188.0, 722.0, 107.0]),
            ("Other (Explain In Narrative)", [104.0, 24.0, 4.0]),
            ("Six Entering Roads", [6.0, 0.0, 0.0]),
            ("Three Entering Roads - T", [335.0, 157.0, 17.0]),
            ("Three Entering Roads - Y", [33.0, 11.0, 2.0]),
            ("Traffic Circle", [9.0, 2.0, 0.0]),
        ],
    ),
    (
        "Road_Type_ID",
        &[
            ("2 Lane, 2 Way", [1195.0, 366.0, 47.0]),
            ("4 Or More Lanes, Divided", [721.0, 332.0, 28.0]),
            ("4 Or More Lanes, Undivided", [779.0, 146.0, 49.0]),
            ("Not Applicable", [650.0, 304.0, 32.0]),
        ],
    ),
    (
        "Road_Algn_ID",
        &[
            ("Curve, Grade", [57.0, 6.0, 1.0]),
            ("Curve, Hillcrest", [13.0, 0.0, 1.0]),
            ("Curve, Level", [141.0, 22.0, 7.0]),
            ("Other (Explain In Narrative)", [17.0, 11.0, 0.0]),
            ("Straight, Grade", [211.0, 41.0, 11.0]),
            ("Straight, Hillcrest", [47.0, 11.0, 2.0]),
            ("Straight, Level", [2858.0, 1057.0, 134.0]),
            ("Unknown", [1.0, 0.0, 0.0]),
        ],
    ),
    (
        "Intrsect_Relat_ID",
        &[
            ("Driveway Access", [371.0, 127.0, 15.0]),
            ("Intersection", [811.0, 258.0, 34.0]),
            ("Intersection Related", [621.0, 274.0, 19.0]),
            ("Non Intersection", [1542.0, 489.0, 88.0]),
        ],
    ),
    (
        "Surf_Cond_ID",
        &[
            ("Dry", [2943.0, 1056.0, 143.0]),
            ("Ice", [3.0, 0.0, 0.0]),
            ("Other", [2.0, 2.0, 0.0]),
            ("Sand, Mud, Dirt", [4.0, 0.0, 0.0]),
            ("Standing Water", [21.0, 1.0, 1.0]),
            ("Unknown", [4.0, 1.0, 0.0]),
            ("Wet", [368.0, 88.0, 12.0]),
        ],
    ),
    (
        "Traffic_Cntl_ID",
        &[
            ("Center Stripe/Divider", [156.0, 45.0, 6.0]),
            ("Marked Lanes", [1556.0, 437.0, 79.0]),
            ("Others", [196.0, 69.0, 9.0]),
            ("Signal Light", [644.0, 251.0, 20.0]),
            ("Stop Sign", [380.0, 175.0, 21.0]),
            ("Yield Sign", [52.0, 15.0, 0.0]),
        ],
    ),
    (
        "Harm_Evnt_ID",
        &[
            ("Animal", [82.0, 9.0, 1.0]),
            ("Fixed Object", [257.0, 74.0, 28.0]),
            ("Motor Vehicle In Transport", [2806.0, 951.0, 113.0]),
            ("Other Non Collision", [6.0, 0.0, 1.0]),
            ("Other Object", [17.0, 4.0, 1.0]),
            ("Overturned", [18.0, 5.0, 2.0]),
            ("Parked Car", [125.0, 100.0, 10.0]),
            ("Pedalcyclist", [15.0, 1.0, 0.0]),
            ("Pedestrian", [19.0, 4.0, 0.0]),
        ],
    ),
    (
        "FHE_Collsn_ID",
        &[
            ("Angle", [807.0, 286.0, 37.0]),
            ("One Motor Vehicle", [539.0, 197.0, 43.0]),
            ("Opposite Direction", [325.0, 97.0, 13.0]),
            ("Others", [38.0, 29.0, 0.0]),
            ("Same Direction", [1636.0, 539.0, 63.0]),
        ],
    ),
    (
        "Obj_Struck_ID",
        &[
            ("Barriers and Safety Structures", [120.0, 42.0, 19.0]),
            ("Built Environment Structures", [57.0, 13.0, 2.0]),
            ("Curb/Ditch/Embankment", [47.0, 9.0, 4.0]),
            ("Hit Tree, Shrub, Landscaping", [35.0, 8.0, 2.0]),
            ("Not Applicable", [2910.0, 1033.0, 112.0]),
            ("Others", [51.0, 7.0, 1.0]),
            ("Overturned", [38.0, 12.0, 6.0]),
            ("Traffic Control Devices and Signs", [47.0, 16.0, 6.0]),
            ("Utility Infrastructure", [40.0, 8.0, 4.0]),
        ],
    ),
    (
        "Road_Cls_ID",
        &[
            ("City Street", [1222.0, 387.0, 50.0]),
            ("County Road", [165.0, 27.0, 15.0]),
            ("Farm To Market", [350.0, 142.0, 13.0]),
            ("Interstate", [477.0, 243.0, 34.0]),
            ("Non Trafficway", [171.0, 130.0, 9.0]),
            ("Other Roads", [0.0, 0.0, 1.0]),
            ("Tollway", [80.0, 11.0, 4.0]),
            ("US & State Hwys", [880.0, 208.0, 30.0]),
        ],
    ),
    (
        "Pop_Group_ID",
        &[
            ("10,000 - 24,999 Pop", [215.0, 56.0, 18.0]),
            ("100,000 - 249,999 Pop", [813.0, 118.0, 11.0]),
            ("2,500 - 4,999 Pop", [71.0, 10.0, 2.0]),
            ("25,000 - 49,999 Pop", [301.0, 594.0, 10.0]),
            ("250,000 Pop And Over", [609.0, 126.0, 45.0]),
            ("5,000 - 9,999 Pop", [149.0, 22.0, 5.0]),
            ("50,000 - 99,999 Pop", [335.0, 51.0, 12.0]),
            ("Rural", [758.0, 158.0, 49.0]),
            ("Town Under 2,499 Pop", [94.0, 13.0, 4.0]),
        ],
    ),
    (
        "Prsn_Age",
        &[
            ("<15 years", [2.0, 0.0, 0.0]),
            ("15-24 years", [608.0, 205.0, 28.0]),
            ("25-34 years", [721.0, 259.0, 25.0]),
            ("35-44 years", [693.0, 225.0, 29.0]),
            ("45-54 years", [506.0, 163.0, 19.0]),
            ("55-64 years", [339.0, 107.0, 12.0]),
            ("65-74 years", [238.0, 60.0, 7.0]),
            ("75+ years", [102.0, 41.0, 3.0]),
            ("Unknown", [136.0, 88.0, 33.0]),
        ],
    ),
    (
        "Prsn_Ethnicity_ID",
        &[
            ("Amer. Indian/Alaskan Native", [27.0, 4.0, 3.0]),
            ("Asian", [269.0, 45.0, 14.0]),
            ("Black", [446.0, 70.0, 18.0]),
            ("Hispanic", [986.0, 629.0, 36.0]),
            ("Other", [20.0, 5.0, 0.0]),
            ("Unknown", [128.0, 83.0, 34.0]),
            ("White", [1469.0, 312.0, 51.0]),
        ],
    ),
    (
        "Prsn_Gndr_ID",
        &[
            ("Female", [1706.0, 529.0, 61.0]),
            ("Male", [1532.0, 540.0, 63.0]),
            ("Unknown", [107.0, 79.0, 32.0]),
        ],
    ),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, priors: Vec<f64>) -> SyntheticSpec {
        SyntheticSpec {
            n_rows: n,
            class_priors: priors,
            categorical: vec![CategoricalFeature {
                name: "c".into(),
                values: vec!["a".into(), "b".into()],
                per_class: vec![vec![1.0, 1.0]; 3],
            }],
            continuous: vec![ContinuousFeature {
                name: "x".into(),
                per_class: vec![Gaussian { mean: 0.0, std: 1.0 }; 3],
                missing_rate: 0.0,
            }],
            label_column: default_label(),
        }
    }

    #[test]
    fn uniform_priors_within_three_sigma() {
        // binomial(3000, 1/3): sd = sqrt(3000 * 1/3 * 2/3) ≈ 25.8, 3σ ≈ 77
        let ds = flat(3000, vec![1.0, 1.0, 1.0]).synthesize(5).unwrap();
        for c in ds.class_counts() {
            assert!((900..=1100).contains(&c), "count {c}");
        }
    }

    #[test]
    fn single_class_prior() {
        let ds = flat(200, vec![1.0, 0.0, 0.0]).synthesize(1).unwrap();
        assert_eq!(ds.class_counts(), [200, 0, 0]);
    }

    #[test]
    fn seeded_draws_are_identical() {
        let s = SyntheticSpec::separable(500);
        assert_eq!(s.synthesize(3).unwrap(), s.synthesize(3).unwrap());
        assert_ne!(s.synthesize(3).unwrap(), s.synthesize(4).unwrap());
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        assert!(matches!(flat(10, vec![0.0, 0.0, 0.0]).synthesize(0), Err(Error::Contract(_))));
        assert!(matches!(flat(10, vec![1.0, -1.0, 1.0]).synthesize(0), Err(Error::Contract(_))));
        assert!(matches!(flat(10, vec![1.0, 1.0]).synthesize(0), Err(Error::Contract(_))));
    }

    #[test]
    fn builtin_specs_have_expected_shape() {
        let s = SyntheticSpec::separable(3000);
        assert_eq!(s.categorical.len() + s.continuous.len(), 20);
        let c = SyntheticSpec::crash_like(100);
        assert_eq!(c.categorical.len(), 20);
        let ds = c.synthesize(2).unwrap();
        assert_eq!(ds.n_rows(), 100);
        assert_eq!(ds.schema().n_categorical(), 20);
    }
}
