import uuid

import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "run_id",
                    models.UUIDField(
                        default=uuid.uuid4,
                        editable=False,
                        primary_key=True,
                        serialize=False,
                    ),
                ),
                ("subcommand", models.CharField(db_index=True, max_length=32)),
                ("experiment", models.CharField(blank=True, default="", max_length=32)),
                ("config", models.JSONField(blank=True, default=dict)),
                ("seed", models.BigIntegerField(blank=True, null=True)),
                ("threads", models.PositiveIntegerField(default=1)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("running", "Running"),
                            ("completed", "Completed"),
                            ("failed", "Failed"),
                        ],
                        db_index=True,
                        default="running",
                        max_length=20,
                    ),
                ),
                (
                    "start_time",
                    models.DateTimeField(db_index=True, default=django.utils.timezone.now),
                ),
                ("end_time", models.DateTimeField(blank=True, null=True)),
                ("duration", models.DurationField(blank=True, null=True)),
                ("output_path", models.CharField(blank=True, default="", max_length=500)),
                ("summary", models.JSONField(blank=True, default=dict)),
                ("error", models.TextField(blank=True, null=True)),
                ("exit_code", models.SmallIntegerField(default=0)),
            ],
            options={
                "verbose_name": "Experiment Run",
                "verbose_name_plural": "Experiment Runs",
                "db_table": "experiment_run",
                "ordering": ["-start_time"],
            },
        ),
    ]
