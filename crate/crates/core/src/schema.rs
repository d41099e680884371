//! Device data layout for composite types.
//!
//! A [`DataSchema`] fixes where each field of a composite lives in device
//! memory: fields are laid out in flattened declaration order (super-chain
//! fields first) at naturally aligned offsets — 4-byte scalars on 4-byte
//! boundaries, 8-byte scalars on 8-byte boundaries. The total size is
//! rounded up to the largest field alignment so arrays of the composite
//! tile correctly.
//!
//! Which fields a kernel actually reads or writes is recorded separately in
//! a [`FieldAccessSet`] during lowering; the serializer consults it to copy
//! only the bytes a kernel will touch.

use crate::types::{ScalarType, Type};
use crate::validate::UnitEnv;
use std::collections::HashMap;

/// One field's slot in a composite layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSlot {
    pub name: String,
    pub elem: ScalarType,
    /// Number of elements: 1 for scalars, N for fixed arrays.
    pub count: u32,
    /// Byte offset from the start of the object.
    pub offset: u32,
}

impl FieldSlot {
    pub fn size_bytes(&self) -> u32 {
        self.elem.size_bytes() * self.count
    }
}

/// Complete layout of a composite type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSchema {
    pub type_name: String,
    pub fields: Vec<FieldSlot>,
    /// Object size in bytes, rounded up to `align`.
    pub size: u32,
    pub align: u32,
}

impl DataSchema {
    pub fn field(&self, name: &str) -> Option<&FieldSlot> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn offset_of(&self, name: &str) -> Option<u32> {
        self.field(name).map(|f| f.offset)
    }
}

fn align_up(x: u32, a: u32) -> u32 {
    (x + a - 1) / a * a
}

/// Lay out `type_name` using the unit's flattened field lists.
pub fn build_schema(env: &UnitEnv, type_name: &str) -> Option<DataSchema> {
    let fields = env.composites.get(type_name)?;
    Some(layout(type_name, fields.iter().map(|(n, t)| (n.as_str(), t))))
}

/// Lay out an explicit field list (used for kernel state objects, whose
/// "type" is the kernel's field declarations).
pub fn layout<'a>(
    type_name: &str,
    fields: impl IntoIterator<Item = (&'a str, &'a Type)>,
) -> DataSchema {
    let mut slots = Vec::new();
    let mut cursor = 0u32;
    let mut align = 4u32;
    for (name, ty) in fields {
        let (elem, count) = match ty {
            Type::Scalar(s) => (*s, 1),
            Type::FixedArray(s, n) => (*s, *n),
            // Arrays and composites never appear in flattened lists; skip
            // defensively rather than panic on a malformed env.
            _ => continue,
        };
        let a = elem.align_bytes();
        align = align.max(a);
        cursor = align_up(cursor, a);
        slots.push(FieldSlot {
            name: name.to_string(),
            elem,
            count,
            offset: cursor,
        });
        cursor += elem.size_bytes() * count;
    }
    DataSchema {
        type_name: type_name.to_string(),
        fields: slots,
        size: align_up(cursor, align),
        align,
    }
}

/// Per-parameter record of which composite fields the kernel touches.
///
/// Keys are field names; an absent key means the kernel never accesses the
/// field. Built during lowering, consumed by the serializer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldAccessSet {
    map: HashMap<String, FieldAccess>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FieldAccess {
    pub read_by_kernel: bool,
    pub written_by_kernel: bool,
}

impl FieldAccessSet {
    pub fn note_read(&mut self, field: &str) {
        self.map.entry(field.to_string()).or_default().read_by_kernel = true;
    }

    pub fn note_write(&mut self, field: &str) {
        self.map.entry(field.to_string()).or_default().written_by_kernel = true;
    }

    pub fn get(&self, field: &str) -> FieldAccess {
        self.map.get(field).copied().unwrap_or_default()
    }

    pub fn is_read(&self, field: &str) -> bool {
        self.get(field).read_by_kernel
    }

    pub fn is_written(&self, field: &str) -> bool {
        self.get(field).written_by_kernel
    }

    /// Mark every field as read and written (whole-object transfers).
    pub fn mark_all(schema: &DataSchema) -> Self {
        let mut s = Self::default();
        for f in &schema.fields {
            s.note_read(&f.name);
            s.note_write(&f.name);
        }
        s
    }

    /// Bytes that must be sent to the device: the sum of the sizes of the
    /// fields the kernel reads.
    pub fn inbound_bytes(&self, schema: &DataSchema) -> u64 {
        schema
            .fields
            .iter()
            .filter(|f| self.is_read(&f.name))
            .map(|f| f.size_bytes() as u64)
            .sum()
    }

    /// Bytes that must be copied back: the sum of the written fields.
    pub fn outbound_bytes(&self, schema: &DataSchema) -> u64 {
        schema
            .fields
            .iter()
            .filter(|f| self.is_written(&f.name))
            .map(|f| f.size_bytes() as u64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_unit;
    use crate::validate::validate_unit;

    fn env_of(src: &str) -> UnitEnv {
        validate_unit(&parse_unit(src, "t").unwrap()).unwrap().env
    }

    #[test]
    fn four_f32_fields_pack_densely() {
        let env = env_of(
            "type V { a: f32; b: f32; c: f32; d: f32; }
             @jacc(iterationSpace=NONE) kernel k(@read v: V, @write o: f32[]) { o[0] = v.a; }",
        );
        let s = build_schema(&env, "V").unwrap();
        let offsets: Vec<u32> = s.fields.iter().map(|f| f.offset).collect();
        assert_eq!(offsets, vec![0, 4, 8, 12]);
        assert_eq!(s.size, 16);
        assert_eq!(s.align, 4);
    }

    #[test]
    fn super_fields_come_first() {
        let env = env_of(
            "type P { x: f32; y: f32; }
             type Q : P { z: f32; }
             @jacc(iterationSpace=NONE) kernel k(@read q: Q, @write o: f32[]) { o[0] = q.z; }",
        );
        let s = build_schema(&env, "Q").unwrap();
        assert_eq!(s.offset_of("x"), Some(0));
        assert_eq!(s.offset_of("y"), Some(4));
        assert_eq!(s.offset_of("z"), Some(8));
        assert_eq!(s.size, 12);
    }

    #[test]
    fn eight_byte_scalars_align_to_eight() {
        let env = env_of(
            "type M { a: i32; b: f64; c: i32; }
             @jacc(iterationSpace=NONE) kernel k(@read m: M, @write o: f64[]) { o[0] = m.b; }",
        );
        let s = build_schema(&env, "M").unwrap();
        assert_eq!(s.offset_of("a"), Some(0));
        assert_eq!(s.offset_of("b"), Some(8));
        assert_eq!(s.offset_of("c"), Some(16));
        assert_eq!(s.size, 24); // padded to 8-byte alignment
        assert_eq!(s.align, 8);
    }

    #[test]
    fn fixed_arrays_occupy_contiguous_elements() {
        let schema = layout(
            "state",
            [
                ("bins", &Type::FixedArray(ScalarType::I32, 256)),
                ("total", &Type::Scalar(ScalarType::I64)),
            ],
        );
        assert_eq!(schema.offset_of("bins"), Some(0));
        assert_eq!(schema.field("bins").unwrap().size_bytes(), 1024);
        assert_eq!(schema.offset_of("total"), Some(1024));
        assert_eq!(schema.size, 1032);
    }

    #[test]
    fn access_set_counts_only_read_fields_inbound() {
        let env = env_of(
            "type V { a: f32; b: f32; c: f32; d: f32; }
             @jacc(iterationSpace=NONE) kernel k(@read v: V, @write o: f32[]) { o[0] = v.b; }",
        );
        let schema = build_schema(&env, "V").unwrap();
        let mut acc = FieldAccessSet::default();
        acc.note_read("b");
        assert_eq!(acc.inbound_bytes(&schema), 4);
        assert_eq!(acc.outbound_bytes(&schema), 0);
        assert_eq!(FieldAccessSet::mark_all(&schema).inbound_bytes(&schema), 16);
    }
}
