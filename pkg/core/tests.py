from django.test import SimpleTestCase

from core import config
from core.errors import (
    ConfigError,
    DataIOError,
    DegeneracyError,
    EmptyMaskError,
    GeometryError,
    PlyHeaderError,
    RadvoteError,
    RankError,
)


class ConfigDefaultsTests(SimpleTestCase):
    def test_defaults_cover_every_builtin_key(self):
        defaults = config.get_defaults()
        for key in config.BUILTIN_DEFAULTS:
            self.assertIn(key, defaults)

    def test_documented_defaults(self):
        defaults = config.get_defaults()
        self.assertEqual(defaults['resolution_mm'], 5.0)
        self.assertEqual(defaults['keypoint_count'], 3)
        self.assertEqual(defaults['auc_max_mm'], 100.0)
        self.assertAlmostEqual(defaults['accuracy_fraction'], 0.10)

    def test_noise_profiles(self):
        none = config.get_noise_profile('none')
        self.assertTrue(all(s == 0.0 for sigma in none['sigma'].values() for s in sigma))
        calibrated = config.get_noise_profile('calibrated')
        self.assertEqual(set(calibrated['sigma']), {'offset', 'vector', 'polar', 'radial'})

    def test_unknown_noise_profile(self):
        with self.assertRaises(KeyError):
            config.get_noise_profile('does-not-exist')

    def test_project_version(self):
        self.assertTrue(config.project_version().startswith('radvote '))


class ErrorHierarchyTests(SimpleTestCase):
    def test_errors_also_derive_from_builtins(self):
        self.assertTrue(issubclass(GeometryError, ValueError))
        self.assertTrue(issubclass(DataIOError, IOError))
        self.assertTrue(issubclass(RankError, DegeneracyError))
        self.assertTrue(issubclass(PlyHeaderError, RadvoteError))
        self.assertTrue(issubclass(EmptyMaskError, ZeroDivisionError))

    def test_config_error_names_field(self):
        error = ConfigError('resolutions_mm[0]', 'must be positive')
        self.assertEqual(error.field, 'resolutions_mm[0]')
        self.assertIn('resolutions_mm[0]', str(error))
