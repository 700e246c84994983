# Generated by Django 5.2.8 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='BenchmarkRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('method', models.CharField(choices=[('fbp', 'Filtered Back Projection'), ('gift', 'Gaussian Reconstruction'), ('external', 'External Reconstruction')], max_length=20, verbose_name='Method')),
                ('phantom', models.CharField(max_length=100, verbose_name='Phantom')),
                ('views', models.PositiveIntegerField(verbose_name='Views')),
                ('psnr_db', models.FloatField(blank=True, null=True, verbose_name='PSNR (dB)')),
                ('ssim', models.FloatField(blank=True, null=True, verbose_name='SSIM')),
                ('iters', models.PositiveIntegerField(default=0, verbose_name='Iterations')),
                ('wall_seconds', models.FloatField(default=0.0, verbose_name='Wall Seconds')),
                ('seed', models.PositiveBigIntegerField(default=0, verbose_name='Seed')),
                ('error', models.TextField(blank=True, verbose_name='Error')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Created At')),
            ],
            options={
                'verbose_name': 'Benchmark Run',
                'verbose_name_plural': 'Benchmark Runs',
                'db_table': 'benchmark_runs',
                'ordering': ['method', 'views', 'seed'],
                'indexes': [models.Index(fields=['method', 'views'], name='benchmark_r_method_5b1c2e_idx'), models.Index(fields=['phantom', 'created_at'], name='benchmark_r_phantom_9d4a7f_idx')],
            },
        ),
    ]
